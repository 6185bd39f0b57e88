// SPDX-License-Identifier: Apache-2.0

#include "xmf/cli.hpp"

int main(int argc, char** argv) { return xmf::cli::run(argc, argv); }
