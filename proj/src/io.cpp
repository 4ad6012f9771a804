#include "psld/harness/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "psld/errors.hpp"

#ifndef PSLD_VERSION
#define PSLD_VERSION "unknown"
#endif

namespace psld::harness {

std::string build_version() { return PSLD_VERSION; }

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& columns,
                     const RunMeta& meta)
    : out_(path), n_(columns.size()) {
  if (!out_) throw ConfigError("cannot write '" + path + "'");
  out_ << "# seed=" << meta.seed << " config_hash=" << meta.config_hash
       << " version=" << meta.version << '\n';
  for (std::size_t i = 0; i < columns.size(); ++i) out_ << (i ? "," : "") << columns[i];
  out_ << '\n';
}

void CsvWriter::row(const std::vector<double>& values) {
  std::vector<std::string> cells;
  cells.reserve(values.size());
  for (double v : values) cells.push_back(format_number(v));
  row_text(cells);
}

void CsvWriter::row_text(const std::vector<std::string>& cells) {
  if (cells.size() != n_) throw std::invalid_argument("csv row has the wrong width");
  for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
  out_ << '\n';
}

void write_scatter_svg(const std::string& path, const std::vector<Series>& series,
                       const std::string& title, std::size_t max_points) {
  constexpr double W = 480, H = 480, pad = 40;
  double lo_x = std::numeric_limits<double>::infinity(), hi_x = -lo_x;
  double lo_y = lo_x, hi_y = -lo_x;
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.xy.size() / 2, max_points); ++i) {
      lo_x = std::min(lo_x, s.xy[2 * i]);
      hi_x = std::max(hi_x, s.xy[2 * i]);
      lo_y = std::min(lo_y, s.xy[2 * i + 1]);
      hi_y = std::max(hi_y, s.xy[2 * i + 1]);
    }
  if (!(lo_x <= hi_x)) lo_x = lo_y = -1, hi_x = hi_y = 1;
  // square box so shapes are not distorted
  const double cx = 0.5 * (lo_x + hi_x), cy = 0.5 * (lo_y + hi_y);
  const double half = 0.55 * std::max({hi_x - lo_x, hi_y - lo_y, 1e-9});
  const auto px = [&](double x) { return pad + (x - (cx - half)) / (2 * half) * (W - 2 * pad); };
  const auto py = [&](double y) { return H - pad - (y - (cy - half)) / (2 * half) * (H - 2 * pad); };

  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw ConfigError("cannot write '" + path + "'");
  std::fprintf(f,
               "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" "
               "viewBox=\"0 0 %g %g\">\n<rect width=\"100%%\" height=\"100%%\" fill=\"white\"/>\n",
               W, H, W, H);
  std::fprintf(f, "<text x=\"%g\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\" "
                  "text-anchor=\"middle\">%s</text>\n", W / 2, title.c_str());
  // axes through the origin when it is in view, else along the box edge
  const double ax = (cx - half < 0 && 0 < cx + half) ? px(0) : pad;
  const double ay = (cy - half < 0 && 0 < cy + half) ? py(0) : H - pad;
  std::fprintf(f, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"#888\"/>\n", pad, ay,
               W - pad, ay);
  std::fprintf(f, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"#888\"/>\n", ax, pad,
               ax, H - pad);
  std::fprintf(f, "<text x=\"%g\" y=\"%g\" font-size=\"10\" font-family=\"sans-serif\">"
                  "x1 [%.3g, %.3g]</text>\n", pad, H - 12, cx - half, cx + half);
  std::fprintf(f, "<text x=\"%g\" y=\"%g\" font-size=\"10\" font-family=\"sans-serif\">"
                  "x2 [%.3g, %.3g]</text>\n", W - pad - 120, H - 12, cy - half, cy + half);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    std::fprintf(f, "<g fill=\"%s\" fill-opacity=\"0.5\">\n", s.color.c_str());
    for (std::size_t i = 0; i < std::min(s.xy.size() / 2, max_points); ++i)
      std::fprintf(f, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"1.5\"/>\n", px(s.xy[2 * i]),
                   py(s.xy[2 * i + 1]));
    std::fprintf(f, "</g>\n");
    std::fprintf(f, "<rect x=\"%g\" y=\"%g\" width=\"10\" height=\"10\" fill=\"%s\"/>\n",
                 W - 130, 34 + 16.0 * k, s.color.c_str());
    std::fprintf(f, "<text x=\"%g\" y=\"%g\" font-size=\"11\" font-family=\"sans-serif\">%s</text>\n",
                 W - 114, 43 + 16.0 * k, s.name.c_str());
  }
  std::fprintf(f, "</svg>\n");
  std::fclose(f);
}

}  // namespace psld::harness
