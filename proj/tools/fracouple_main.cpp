#include <string>
#include <vector>

#include "fracouple/config.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return fracouple::cli_run(args);
}
