#include "owgr/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "owgr/common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace owgr {

namespace {

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw IoError("cannot write " + path.string());
}

}  // namespace

std::string summary_json(const std::vector<SummaryRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    arr.push_back({{"method", r.method},
                   {"value", r.value},
                   {"metric", r.metric},
                   {"mean", r.stats.mean},
                   {"median", r.stats.median},
                   {"q1", r.stats.q1},
                   {"q3", r.stats.q3},
                   {"min", r.stats.min},
                   {"max", r.stats.max},
                   {"n", r.stats.n}});
  }
  return arr.dump(2) + "\n";
}

std::vector<SummaryRow> summary_from_json(const std::string& text) {
  json arr;
  try {
    arr = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("bad summary json: ") + e.what());
  }
  std::vector<SummaryRow> rows;
  for (const auto& o : arr) {
    SummaryRow r;
    r.method = o.at("method").get<std::string>();
    r.value = o.at("value").get<std::string>();
    r.metric = o.at("metric").get<std::string>();
    r.stats.mean = o.at("mean").get<double>();
    r.stats.median = o.at("median").get<double>();
    r.stats.q1 = o.at("q1").get<double>();
    r.stats.q3 = o.at("q3").get<double>();
    r.stats.min = o.at("min").get<double>();
    r.stats.max = o.at("max").get<double>();
    r.stats.n = o.at("n").get<std::size_t>();
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string summary_svg(const std::vector<SummaryRow>& rows,
                        const std::string& metric) {
  std::vector<const SummaryRow*> boxes;
  for (const auto& r : rows) {
    if (r.metric == metric) boxes.push_back(&r);
  }

  const double box_w = 28, gap = 18, left = 60, top = 20;
  const double plot_h = 260, label_h = 70;
  const double width =
      left + static_cast<double>(boxes.size()) * (box_w + gap) + gap;
  const double height = top + plot_h + label_h;

  double lo = 0.0, hi = 1.0;
  if (!boxes.empty()) {
    lo = boxes.front()->stats.min;
    hi = boxes.front()->stats.max;
    for (const auto* b : boxes) {
      lo = std::min(lo, b->stats.min);
      hi = std::max(hi, b->stats.max);
    }
    const double pad = std::max(1e-3, 0.05 * (hi - lo));
    lo -= pad;
    hi += pad;
  }
  auto y_of = [&](double v) {
    return top + plot_h * (1.0 - (v - lo) / (hi - lo));
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\""
     << fmt2(width) << "\" height=\"" << fmt2(height) << "\">\n";
  os << "<text x=\"8\" y=\"14\" font-size=\"12\">" << metric << "</text>\n";
  // y axis with min/max ticks
  os << "<line x1=\"" << fmt2(left - 8) << "\" y1=\"" << fmt2(top)
     << "\" x2=\"" << fmt2(left - 8) << "\" y2=\"" << fmt2(top + plot_h)
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"2\" y=\"" << fmt2(y_of(hi) + 4) << "\" font-size=\"10\">"
     << fmt2(hi) << "</text>\n";
  os << "<text x=\"2\" y=\"" << fmt2(y_of(lo) + 4) << "\" font-size=\"10\">"
     << fmt2(lo) << "</text>\n";

  double x = left + gap;
  for (const auto* b : boxes) {
    const auto& s = b->stats;
    const double cx = x + box_w / 2;
    // whiskers
    os << "<line class=\"whisker\" x1=\"" << fmt2(cx) << "\" y1=\""
       << fmt2(y_of(s.min)) << "\" x2=\"" << fmt2(cx) << "\" y2=\""
       << fmt2(y_of(s.q1)) << "\" stroke=\"black\"/>\n";
    os << "<line class=\"whisker\" x1=\"" << fmt2(cx) << "\" y1=\""
       << fmt2(y_of(s.q3)) << "\" x2=\"" << fmt2(cx) << "\" y2=\""
       << fmt2(y_of(s.max)) << "\" stroke=\"black\"/>\n";
    // interquartile box
    os << "<rect class=\"box\" x=\"" << fmt2(x) << "\" y=\""
       << fmt2(y_of(s.q3)) << "\" width=\"" << fmt2(box_w) << "\" height=\""
       << fmt2(std::max(0.5, y_of(s.q1) - y_of(s.q3)))
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    // median line and mean marker
    os << "<line class=\"median\" x1=\"" << fmt2(x) << "\" y1=\""
       << fmt2(y_of(s.median)) << "\" x2=\"" << fmt2(x + box_w) << "\" y2=\""
       << fmt2(y_of(s.median)) << "\" stroke=\"black\"/>\n";
    os << "<circle class=\"mean\" cx=\"" << fmt2(cx) << "\" cy=\""
       << fmt2(y_of(s.mean)) << "\" r=\"3\" fill=\"black\"/>\n";
    os << "<text x=\"" << fmt2(cx) << "\" y=\"" << fmt2(top + plot_h + 14)
       << "\" font-size=\"9\" text-anchor=\"middle\" transform=\"rotate(45 "
       << fmt2(cx) << " " << fmt2(top + plot_h + 14) << ")\">" << b->method
       << "/" << b->value << "</text>\n";
    x += box_w + gap;
  }
  os << "</svg>\n";
  return os.str();
}

void emit_report(const ResultsTable& table, const std::string& format,
                 const std::string& out_dir) {
  const auto rows = summarize(table);
  const fs::path out(out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string());

  if (format == "csv") {
    write_file(out / "summary.csv", summary_csv(rows));
  } else if (format == "json") {
    write_file(out / "summary.json", summary_json(rows));
  } else if (format == "svg") {
    std::set<std::string> metrics;
    for (const auto& r : rows) metrics.insert(r.metric);
    for (const auto& m : metrics) {
      write_file(out / ("boxplot_" + m + ".svg"), summary_svg(rows, m));
    }
  } else {
    throw ParamError("unknown report format: " + format);
  }
}

}  // namespace owgr
