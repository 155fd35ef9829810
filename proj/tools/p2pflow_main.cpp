#include <cstdio>

int main() {
    std::puts("p2pflow cli placeholder");
    return 0;
}
