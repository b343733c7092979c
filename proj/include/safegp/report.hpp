#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "safegp/learning.hpp"

namespace safegp {

using json = nlohmann::ordered_json;

// Shortest round-trip decimal form; deterministic across runs.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// episodes.csv

constexpr const char* kEpisodeCsvHeader =
    "run_id,seed,episode,kind,steps,native_return,violated,violation_step,"
    "blocked,xi,predicted_risk,wall_ms";

// Appends one row per episode as it finishes, flushing each row so a crashed
// run still leaves a usable log.
class EpisodeCsvWriter {
 public:
  EpisodeCsvWriter(const std::string& path, bool write_header = true)
      : out_(path, std::ios::out | std::ios::trunc) {
    if (!out_) throw ConfigError("cannot open '" + path + "' for writing");
    if (write_header) out_ << kEpisodeCsvHeader << "\n";
    out_.flush();
  }

  void write(const std::string& run_id, uint64_t seed, int episode_index,
             const EpisodeRecord& rec, double wall_ms = 0.0) {
    out_ << run_id << ',' << seed << ',' << episode_index << ','
         << to_string(rec.kind) << ',' << rec.steps() << ','
         << format_double(rec.native_return()) << ',' << (rec.violated ? 1 : 0)
         << ',' << rec.violation_step << ','
         << (rec.kind == EpisodeKind::blocked ? 1 : 0) << ','
         << format_double(rec.xi) << ',' << format_double(rec.predicted_risk)
         << ',' << format_double(wall_ms) << "\n";
    out_.flush();
    ++rows_;
  }

  int rows() const { return rows_; }

 private:
  std::ofstream out_;
  int rows_ = 0;
};

namespace detail {

inline std::string trim_csv(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

struct CsvRow {
  std::string run_id;
  uint64_t seed = 0;
  int episode = 0;
  std::string kind;
  int steps = 0;
  double native_return = 0.0;
  bool violated = false;
  int violation_step = -1;
  bool blocked = false;
  double xi = 0.0;
  double predicted_risk = 0.0;
  double wall_ms = 0.0;
};

inline std::vector<CsvRow> parse_episode_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw ConfigError(path + ": empty file, expected a csv header");
  if (detail::trim_csv(line) != kEpisodeCsvHeader)
    throw ConfigError(path + ": unrecognized header '" + line + "'");
  std::vector<CsvRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim_csv(line).empty()) continue;
    std::vector<std::string> f;
    size_t start = 0;
    while (true) {
      const size_t comma = line.find(',', start);
      f.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (f.size() != 12)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected 12 fields, got " + std::to_string(f.size()));
    try {
      CsvRow r;
      r.run_id = f[0];
      r.seed = std::stoull(f[1]);
      r.episode = std::stoi(f[2]);
      r.kind = f[3];
      r.steps = std::stoi(f[4]);
      r.native_return = std::stod(f[5]);
      r.violated = std::stoi(f[6]) != 0;
      r.violation_step = std::stoi(f[7]);
      r.blocked = std::stoi(f[8]) != 0;
      r.xi = std::stod(f[9]);
      r.predicted_risk = std::stod(f[10]);
      r.wall_ms = std::stod(f[11]);
      rows.push_back(std::move(r));
    } catch (const std::exception&) {
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": malformed row '" + line + "'");
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Minimal SVG line/band renderer; no plotting dependency.

struct SvgSeries {
  std::vector<double> x, y;
  std::string color = "#1f6f8b";
  std::string label;
  bool dashed = false;
};

struct SvgBand {
  std::vector<double> x, lo, hi;  // filled region, e.g. mean +- 2 std
  std::string color = "#1f6f8b";
};

namespace detail {

inline std::string fmt_px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

inline double nice_step(double range) {
  if (!(range > 0.0)) return 1.0;
  const double raw = range / 4.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (raw <= m * mag * (1.0 + 1e-12)) return m * mag;
  return 10.0 * mag;
}

}  // namespace detail

inline std::string svg_line_chart(const std::string& title,
                                  const std::string& xlabel,
                                  const std::string& ylabel,
                                  const std::vector<SvgSeries>& series,
                                  const std::vector<SvgBand>& bands = {}) {
  const double w = 720, h = 460;
  const double ml = 74, mr = 22, mt = 46, mb = 58;

  double xmin = kPosInf, xmax = kNegInf, ymin = kPosInf, ymax = kNegInf;
  auto grow = [&](double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  };
  for (const SvgSeries& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) grow(s.x[i], s.y[i]);
  for (const SvgBand& b : bands)
    for (size_t i = 0; i < b.x.size(); ++i) {
      grow(b.x[i], b.lo[i]);
      grow(b.x[i], b.hi[i]);
    }
  if (!(xmin <= xmax)) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax - xmin < 1e-12) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 1.0;
    ymax += 1.0;
  }
  const double ypad = 0.06 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) {
    return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr);
  };
  auto py = [&](double y) {
    return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb);
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         detail::fmt_px(w) + "\" height=\"" + detail::fmt_px(h) +
         "\" viewBox=\"0 0 " + detail::fmt_px(w) + " " + detail::fmt_px(h) +
         "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + detail::fmt_px(w / 2) + "\" y=\"26\" font-size=\"17\" "
         "font-family=\"sans-serif\" text-anchor=\"middle\">" + title +
         "</text>\n";

  // Gridlines and ticks.
  const double xstep = detail::nice_step(xmax - xmin);
  const double ystep = detail::nice_step(ymax - ymin);
  for (double t = std::ceil(xmin / xstep) * xstep; t <= xmax + 1e-12;
       t += xstep) {
    const double x = px(t);
    svg += "<line x1=\"" + detail::fmt_px(x) + "\" y1=\"" +
           detail::fmt_px(mt) + "\" x2=\"" + detail::fmt_px(x) + "\" y2=\"" +
           detail::fmt_px(h - mb) + "\" stroke=\"#e5e5e5\"/>\n";
    svg += "<text x=\"" + detail::fmt_px(x) + "\" y=\"" +
           detail::fmt_px(h - mb + 20) +
           "\" font-size=\"12\" font-family=\"sans-serif\" "
           "text-anchor=\"middle\">" + detail::fmt_tick(t) + "</text>\n";
  }
  for (double t = std::ceil(ymin / ystep) * ystep; t <= ymax + 1e-12;
       t += ystep) {
    const double y = py(t);
    svg += "<line x1=\"" + detail::fmt_px(ml) + "\" y1=\"" +
           detail::fmt_px(y) + "\" x2=\"" + detail::fmt_px(w - mr) +
           "\" y2=\"" + detail::fmt_px(y) + "\" stroke=\"#e5e5e5\"/>\n";
    svg += "<text x=\"" + detail::fmt_px(ml - 8) + "\" y=\"" +
           detail::fmt_px(y + 4) +
           "\" font-size=\"12\" font-family=\"sans-serif\" "
           "text-anchor=\"end\">" + detail::fmt_tick(t) + "</text>\n";
  }

  // Bands first so lines draw on top.
  for (const SvgBand& b : bands) {
    if (b.x.empty()) continue;
    std::string pts;
    for (size_t i = 0; i < b.x.size(); ++i)
      pts += detail::fmt_px(px(b.x[i])) + "," + detail::fmt_px(py(b.hi[i])) + " ";
    for (size_t i = b.x.size(); i-- > 0;)
      pts += detail::fmt_px(px(b.x[i])) + "," + detail::fmt_px(py(b.lo[i])) + " ";
    svg += "<polygon points=\"" + pts + "\" fill=\"" + b.color +
           "\" fill-opacity=\"0.22\" stroke=\"none\"/>\n";
  }
  for (const SvgSeries& s : series) {
    if (s.x.empty()) continue;
    std::string pts;
    for (size_t i = 0; i < s.x.size(); ++i)
      pts += detail::fmt_px(px(s.x[i])) + "," + detail::fmt_px(py(s.y[i])) + " ";
    svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" +
           s.color + "\" stroke-width=\"2\"" +
           (s.dashed ? " stroke-dasharray=\"7,5\"" : "") + "/>\n";
    if (s.x.size() == 1) {
      svg += "<circle cx=\"" + detail::fmt_px(px(s.x[0])) + "\" cy=\"" +
             detail::fmt_px(py(s.y[0])) + "\" r=\"3\" fill=\"" + s.color +
             "\"/>\n";
    }
  }

  // Axes frame.
  svg += "<rect x=\"" + detail::fmt_px(ml) + "\" y=\"" + detail::fmt_px(mt) +
         "\" width=\"" + detail::fmt_px(w - ml - mr) + "\" height=\"" +
         detail::fmt_px(h - mt - mb) +
         "\" fill=\"none\" stroke=\"#333333\"/>\n";
  svg += "<text x=\"" + detail::fmt_px(ml + (w - ml - mr) / 2) + "\" y=\"" +
         detail::fmt_px(h - 14) +
         "\" font-size=\"13\" font-family=\"sans-serif\" "
         "text-anchor=\"middle\">" + xlabel + "</text>\n";
  svg += "<text x=\"20\" y=\"" + detail::fmt_px(mt + (h - mt - mb) / 2) +
         "\" font-size=\"13\" font-family=\"sans-serif\" "
         "text-anchor=\"middle\" transform=\"rotate(-90 20 " +
         detail::fmt_px(mt + (h - mt - mb) / 2) + ")\">" + ylabel +
         "</text>\n";

  // Legend.
  double ly = mt + 16;
  for (const SvgSeries& s : series) {
    if (s.label.empty()) continue;
    const double lx = w - mr - 160;
    svg += "<line x1=\"" + detail::fmt_px(lx) + "\" y1=\"" +
           detail::fmt_px(ly - 4) + "\" x2=\"" + detail::fmt_px(lx + 26) +
           "\" y2=\"" + detail::fmt_px(ly - 4) + "\" stroke=\"" + s.color +
           "\" stroke-width=\"2\"" +
           (s.dashed ? " stroke-dasharray=\"7,5\"" : "") + "/>\n";
    svg += "<text x=\"" + detail::fmt_px(lx + 32) + "\" y=\"" +
           detail::fmt_px(ly) +
           "\" font-size=\"12\" font-family=\"sans-serif\">" + s.label +
           "</text>\n";
    ly += 18;
  }

  svg += "</svg>\n";
  return svg;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::out | std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out << text;
}

}  // namespace safegp
