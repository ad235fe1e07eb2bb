#include <cstdio>

int main() {
    std::fprintf(stderr, "cli not wired up yet\n");
    return 1;
}
