static int hidden_helper(int x) {
    return x * 2 + 1;
}

int visible_fn(int x) {
    return hidden_helper(x) + 7;
}

int alias_fn(int x) __attribute__((alias("visible_fn")));

asm(".globl ghost\n"
    ".type ghost, @function\n"
    "ghost:\n");
