#include <boseflow/cli.hpp>

int main(int argc, char** argv) { return boseflow::cli::run(argc, argv); }
