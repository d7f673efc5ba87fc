#pragma once

#include <string>
#include <vector>

#include "owgr/envelope.hpp"

namespace owgr {

std::string summary_json(const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> summary_from_json(const std::string& text);

// One box-and-whisker per summary row of the given metric, mean marker
// included. Static SVG 1.1.
std::string summary_svg(const std::vector<SummaryRow>& rows,
                        const std::string& metric);

// Writes the summary in the requested format (csv | json | svg) under
// out_dir. SVG yields one file per metric present.
void emit_report(const ResultsTable& table, const std::string& format,
                 const std::string& out_dir);

}  // namespace owgr
