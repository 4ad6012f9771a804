#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace psld::harness {

// Provenance written as the first line of every CSV artifact.
struct RunMeta {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string version;
};

// Build version baked in at configure time (git describe when available).
std::string build_version();

// CSV with a `# seed=... config_hash=... version=...` comment line, then the
// header. Numbers are written with 17 significant digits so equal runs give
// byte-identical files.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& columns,
            const RunMeta& meta);
  void row(const std::vector<double>& values);
  // mixed rows: already formatted cells
  void row_text(const std::vector<std::string>& cells);
  std::size_t columns() const { return n_; }

 private:
  std::ofstream out_;
  std::size_t n_;
};

std::string format_number(double v);

struct Series {
  std::string name;
  std::vector<double> xy;  // n x 2
  std::string color;
};

// Scatter plot of 2-D point sets with axes and a legend; at most
// max_points points per series are drawn.
void write_scatter_svg(const std::string& path, const std::vector<Series>& series,
                       const std::string& title, std::size_t max_points = 4000);

}  // namespace psld::harness
