#include <iostream>

#include "protoens/cli.hpp"

int main(int argc, char** argv) {
    return protoens::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
