#include "splatfit/cli.hpp"

int main(int argc, char** argv) {
    return splatfit::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
