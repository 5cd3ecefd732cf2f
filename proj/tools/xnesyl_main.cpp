#include "xnesyl/cli.hpp"

int main(int argc, char** argv) { return xnesyl::cli::run(argc, argv); }
