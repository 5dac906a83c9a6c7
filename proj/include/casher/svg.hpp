#pragma once

// Minimal plots for the report command.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace casher {

std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<std::pair<double, double>>& points);

// (batch, human_demo_count) pairs read back from a ledger CSV.
std::vector<std::pair<double, double>> ledger_human_demos(
    const std::filesystem::path& ledger_csv);

}  // namespace casher
