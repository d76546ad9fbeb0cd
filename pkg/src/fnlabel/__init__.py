"""fnlabel: ranked token labels and synthesized names for binary functions.

Train-and-predict toolkit that assigns ranked sets of name tokens to
binary functions with a propensity-scored tree ensemble, then orders the
chosen tokens into a readable name with a trigram language model.
"""

__version__ = "0.1.0"

MODEL_FORMAT_VERSION = 1
LM_FORMAT_VERSION = 1
LABELSPACE_FORMAT_VERSION = 1
