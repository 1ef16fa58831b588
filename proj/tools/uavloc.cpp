#include "uavloc/cli.hpp"

int main(int argc, char** argv) { return uavloc::cli_dispatch(argc, argv); }
