#pragma once

#include "leapattn/bench.hpp"

#include <string>

namespace leapattn {

/// Standalone SVG scatter plot: x = throughput, y = quality, circle area
/// proportional to memory, one labelled point per scheme. Valid XML.
std::string scatter_svg(const TradeoffReport& report, const std::string& x_label,
                        const std::string& y_label);

}  // namespace leapattn
