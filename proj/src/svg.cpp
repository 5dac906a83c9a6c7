#include "casher/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "casher/errors.hpp"

namespace casher {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<std::pair<double, double>>& points) {
  constexpr double W = 480, H = 320, L = 60, R = 20, T = 40, B = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!points.empty()) {
    x0 = x1 = points[0].first;
    y1 = points[0].second;
    for (const auto& [x, y] : points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
    if (x1 == x0) x1 = x0 + 1;
    if (y1 <= 0) y1 = 1;
  }
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
    << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\">"
    << escape(title) << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R
    << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\""
    << H - B << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
  s << "<text x=\"16\" y=\"" << (T + H - B) / 2
    << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (T + H - B) / 2
    << ")\">" << escape(y_label) << "</text>\n";
  for (double y : {y0, (y0 + y1) / 2, y1})
    s << "<text x=\"" << L - 6 << "\" y=\"" << fmt(py(y) + 4)
      << "\" text-anchor=\"end\">" << tick(y) << "</text>\n";
  for (const auto& [x, y] : points)
    s << "<text x=\"" << fmt(px(x)) << "\" y=\"" << H - B + 16
      << "\" text-anchor=\"middle\">" << tick(x) << "</text>\n";
  if (!points.empty()) {
    s << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : points) s << fmt(px(x)) << ',' << fmt(py(y)) << ' ';
    s << "\"/>\n";
    for (const auto& [x, y] : points)
      s << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y))
        << "\" r=\"3\" fill=\"steelblue\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<std::pair<double, double>> ledger_human_demos(
    const std::filesystem::path& ledger_csv) {
  std::ifstream in(ledger_csv);
  if (!in) throw FormatError("cannot open " + ledger_csv.string());
  std::string line;
  std::vector<std::string> header;
  std::vector<std::pair<double, double>> points;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header.empty()) {
      header = cells;
      continue;
    }
    auto col = [&](const std::string& name) -> const std::string& {
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end() || static_cast<std::size_t>(it - header.begin()) >= cells.size())
        throw FormatError(ledger_csv.string() + ":" + std::to_string(line_no) +
                          ": missing column " + name);
      return cells[static_cast<std::size_t>(it - header.begin())];
    };
    try {
      points.emplace_back(std::stod(col("batch")), std::stod(col("human_demo_count")));
    } catch (const std::invalid_argument&) {
      throw FormatError(ledger_csv.string() + ":" + std::to_string(line_no) +
                        ": malformed number");
    }
  }
  return points;
}

}  // namespace casher
