#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "spatnet/core.hpp"
#include "spatnet/grid.hpp"

namespace spatnet {

/// Writes units.csv, network.csv, lagged_network.csv (if present), meta.json
/// and truth.csv (if present) into `dir`, creating it when needed.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

/// Field values as CSV (x1,x2,alpha,value) with a JSON header file `<path>.json`
/// describing the lattice.
void write_field(const std::filesystem::path& path, const GridField& field);
GridField read_field(const std::filesystem::path& path);

/// Minimal CSV helpers shared by the io and harness code.
std::vector<std::string> split_csv_line(const std::string& line);
std::string format_real(double v);

}  // namespace spatnet
