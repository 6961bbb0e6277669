#include "gsec/cli.hpp"

int main(int argc, char** argv) {
    return gsec::cli::run(argc, argv);
}
