#include "nst/plot.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "nst/error.hpp"
#include "nst/fileio.hpp"

namespace nst {

namespace {

constexpr const char* kHeader = "iter,total,content,style";

std::string trim_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

}  // namespace

LossCurve parse_loss_csv(const std::string& text) {
  LossCurve curve;
  std::istringstream in(text);
  std::string line;
  long number = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++number;
    line = trim_cr(line);
    if (!header) {
      if (line != kHeader) {
        throw ParseError("line 1: expected header '" + std::string(kHeader) + "', got '" + line + "'");
      }
      header = true;
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split(line);
    const std::string where = "line " + std::to_string(number) + ": ";
    if (fields.size() != 4) {
      throw ParseError(where + "expected 4 fields, got " + std::to_string(fields.size()));
    }
    char* end = nullptr;
    errno = 0;
    const long iter = std::strtol(fields[0].c_str(), &end, 10);
    if (fields[0].empty() || *end != '\0' || errno != 0) {
      throw ParseError(where + "iter '" + fields[0] + "' is not an integer");
    }
    double v[3];
    for (int k = 0; k < 3; ++k) {
      const std::string& f = fields[std::size_t(k) + 1];
      v[k] = std::strtod(f.c_str(), &end);
      if (f.empty() || *end != '\0' || !std::isfinite(v[k])) {
        throw ParseError(where + "value '" + f + "' is not a finite number");
      }
    }
    curve.iter.push_back(iter);
    curve.total.push_back(v[0]);
    curve.content.push_back(v[1]);
    curve.style.push_back(v[2]);
  }
  if (!header) throw ParseError("line 1: empty file, expected header '" + std::string(kHeader) + "'");
  if (curve.iter.empty()) throw ParseError("line 2: no data rows");
  return curve;
}

std::string format_loss_csv(const LossCurve& curve) {
  std::string out = std::string(kHeader) + "\n";
  char buf[160];
  for (std::size_t i = 0; i < curve.iter.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g\n", curve.iter[i], curve.total[i],
                  curve.content[i], curve.style[i]);
    out += buf;
  }
  return out;
}

std::string render_loss_svg(const LossCurve& curve) {
  constexpr double W = 720, H = 440, left = 80, right = 700, top = 30, bottom = 380;
  const std::vector<const std::vector<double>*> series = {&curve.total, &curve.content, &curve.style};
  const char* names[] = {"total", "content", "style"};
  const char* colors[] = {"#1f77b4", "#2ca02c", "#d62728"};

  bool log_scale = true;
  for (const auto* s : series)
    for (double v : *s)
      if (!(v > 0)) log_scale = false;
  auto ty = [&](double v) { return log_scale ? std::log10(v) : v; };

  double x0 = double(curve.iter.front()), x1 = x0;
  for (long i : curve.iter) {
    x0 = std::min(x0, double(i));
    x1 = std::max(x1, double(i));
  }
  double y0 = ty(curve.total.front()), y1 = y0;
  for (const auto* s : series) {
    for (double v : *s) {
      y0 = std::min(y0, ty(v));
      y1 = std::max(y1, ty(v));
    }
  }
  if (x1 == x0) {
    x0 -= 1;
    x1 += 1;
  }
  if (y1 == y0) {
    y0 -= 1;
    y1 += 1;
  }
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (right - left); };
  auto py = [&](double y) { return bottom - (y - y0) / (y1 - y0) * (bottom - top); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  o << "<path d=\"M" << left << " " << top << " V" << bottom << " H" << right
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4, yv = y0 + (y1 - y0) * k / 4;
    const std::string xs = fmt("%.2f", px(xv)), ys = fmt("%.2f", py(yv));
    o << "<line x1=\"" << xs << "\" y1=\"" << bottom << "\" x2=\"" << xs << "\" y2=\""
      << bottom + 5 << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << xs << "\" y=\"" << bottom + 18 << "\" text-anchor=\"middle\">"
      << fmt("%.6g", xv) << "</text>\n";
    o << "<line x1=\"" << left - 5 << "\" y1=\"" << ys << "\" x2=\"" << left << "\" y2=\"" << ys
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << left - 8 << "\" y=\"" << ys << "\" text-anchor=\"end\" dy=\"4\">"
      << fmt("%.4g", log_scale ? std::pow(10.0, yv) : yv) << "</text>\n";
  }
  o << "<text x=\"" << (left + right) / 2 << "\" y=\"" << H - 20 << "\" text-anchor=\"middle\">iteration</text>\n";
  o << "<text x=\"18\" y=\"" << (top + bottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << (top + bottom) / 2 << ")\">loss" << (log_scale ? " (log scale)" : "") << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    o << "<polyline fill=\"none\" stroke=\"" << colors[s] << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < curve.iter.size(); ++i) {
      o << (i ? " " : "") << fmt("%.2f", px(double(curve.iter[i]))) << ","
        << fmt("%.2f", py(ty((*series[s])[i])));
    }
    o << "\"/>\n";
    if (curve.iter.size() == 1) {
      o << "<circle cx=\"" << fmt("%.2f", px(double(curve.iter[0]))) << "\" cy=\""
        << fmt("%.2f", py(ty((*series[s])[0]))) << "\" r=\"3\" fill=\"" << colors[s] << "\"/>\n";
    }
    const double ly = top + 14.0 * double(s);
    o << "<line x1=\"" << right - 90 << "\" y1=\"" << ly << "\" x2=\"" << right - 70 << "\" y2=\""
      << ly << "\" stroke=\"" << colors[s] << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << right - 65 << "\" y=\"" << ly << "\" dy=\"4\">" << names[s] << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void emit_plot(const std::filesystem::path& csv, const std::filesystem::path& svg) {
  LossCurve curve;
  try {
    curve = parse_loss_csv(read_file(csv));
  } catch (const ParseError& e) {
    throw ParseError(csv.string() + ": " + e.what());
  }
  write_file_atomic(svg, render_loss_svg(curve));
}

}  // namespace nst
