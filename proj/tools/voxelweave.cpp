#include "voxelweave/cli.hpp"

int main(int argc, char** argv) { return vw::run_cli(argc, argv); }
