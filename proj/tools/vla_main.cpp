#include "vla/cli.hpp"

int main(int argc, char** argv) { return vla::cli::run(argc, argv); }
