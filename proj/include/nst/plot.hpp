#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace nst {

/// Rows of a loss CSV with header `iter,total,content,style`.
struct LossCurve {
  std::vector<long> iter;
  std::vector<double> total;
  std::vector<double> content;
  std::vector<double> style;
};

/// Throws ParseError naming the offending line.
LossCurve parse_loss_csv(const std::string& text);

std::string format_loss_csv(const LossCurve& curve);

/// SVG line chart of the three series. The y axis is log10 when every value
/// is positive, linear otherwise.
std::string render_loss_svg(const LossCurve& curve);

/// Reads `csv`, writes the SVG atomically to `svg`.
void emit_plot(const std::filesystem::path& csv, const std::filesystem::path& svg);

}  // namespace nst
