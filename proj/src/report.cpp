#include "mbmd/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace mbmd {

std::string cv_rows_csv(const std::vector<NamedCv>& results) {
  std::ostringstream out;
  out << "suite,variant,fold,repeat,acc,bca,weighted_f1,trial_acc,trial_bca,trial_f1\n";
  for (const auto& r : results) {
    for (const auto& c : r.cv.cells) {
      out << r.suite << ',' << r.variant << ',' << c.fold << ',' << c.repeat << ','
          << fmt_fixed(c.window_metrics.acc) << ',' << fmt_fixed(c.window_metrics.bca) << ','
          << fmt_fixed(c.window_metrics.weighted_f1) << ',' << fmt_fixed(c.trial_metrics.acc) << ','
          << fmt_fixed(c.trial_metrics.bca) << ',' << fmt_fixed(c.trial_metrics.weighted_f1) << '\n';
    }
  }
  return out.str();
}

std::string cv_aggregate_csv(const std::vector<NamedCv>& results) {
  std::ostringstream out;
  out << "suite,variant,acc_mean,acc_std,bca_mean,bca_std,f1_mean,f1_std\n";
  for (const auto& r : results) {
    out << r.suite << ',' << r.variant << ',' << fmt_fixed(r.cv.acc.mean) << ','
        << fmt_fixed(r.cv.acc.stddev) << ',' << fmt_fixed(r.cv.bca.mean) << ','
        << fmt_fixed(r.cv.bca.stddev) << ',' << fmt_fixed(r.cv.weighted_f1.mean) << ','
        << fmt_fixed(r.cv.weighted_f1.stddev) << '\n';
  }
  return out.str();
}

std::string train_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,l_ce,l_distill,l_norm,l_imp,total,val_loss,val_acc,val_bca,val_f1\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << fmt_fixed(e.train.l_ce) << ',' << fmt_fixed(e.train.l_distill) << ','
        << fmt_fixed(e.train.l_norm) << ',' << fmt_fixed(e.train.l_imp) << ','
        << fmt_fixed(e.train.total) << ',' << fmt_fixed(e.val_loss) << ',' << fmt_fixed(e.val_acc)
        << ',' << fmt_fixed(e.val_bca) << ',' << fmt_fixed(e.val_f1) << '\n';
  }
  return out.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::vector<AggregateRow> parse_aggregate_csv(const std::string& csv_text) {
  std::vector<AggregateRow> rows;
  std::istringstream in(csv_text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      continue;
    }
    auto f = split_csv_line(line);
    require(f.size() == 8, ErrorKind::Data, "malformed aggregate CSV row: " + line);
    AggregateRow r;
    r.suite = f[0];
    r.variant = f[1];
    r.acc_mean = std::stod(f[2]);
    r.acc_std = std::stod(f[3]);
    r.bca_mean = std::stod(f[4]);
    r.bca_std = std::stod(f[5]);
    r.f1_mean = std::stod(f[6]);
    r.f1_std = std::stod(f[7]);
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

constexpr int kW = 640, kH = 400, kMargin = 60;
const char* kColors[3] = {"#1f77b4", "#d62728", "#2ca02c"};

std::string svg_header(const std::string& title) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  s << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  s << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" font-family=\"sans-serif\">"
    << title << "</text>\n";
  return s.str();
}

std::string axis_and_legend(const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  std::ostringstream s;
  s << "<line x1=\"" << kMargin << "\" y1=\"" << kH - kMargin << "\" x2=\"" << kW - kMargin / 2
    << "\" y2=\"" << kH - kMargin << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << kMargin << "\" y1=\"" << kH - kMargin << "\" x2=\"" << kMargin << "\" y2=\""
    << kMargin / 2 << "\" stroke=\"black\"/>\n";
  for (size_t i = 0; i < series.size(); ++i) {
    const int y = 40 + static_cast<int>(i) * 18;
    s << "<rect x=\"" << kW - 150 << "\" y=\"" << y - 10 << "\" width=\"12\" height=\"12\" fill=\""
      << kColors[i % 3] << "\"/>\n";
    s << "<text x=\"" << kW - 132 << "\" y=\"" << y << "\" font-size=\"12\" font-family=\"sans-serif\">"
      << series[i].first << "</text>\n";
  }
  return s.str();
}

double plot_x(double t) { return kMargin + t * (kW - 1.5 * kMargin); }
double plot_y(double v, double lo, double hi) {
  const double t = (hi > lo) ? (v - lo) / (hi - lo) : 0.5;
  return (kH - kMargin) - t * (kH - 1.5 * kMargin);
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::vector<double>& xs,
                           const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  require(!xs.empty(), ErrorKind::Data, "line chart needs at least one point");
  double lo = 1e300, hi = -1e300;
  for (const auto& [name, ys] : series) {
    require(ys.size() == xs.size(), ErrorKind::Data, "series length mismatch");
    for (double y : ys) {
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
  }
  lo = std::max(0.0, lo - 0.05);
  hi = std::min(1.0, hi + 0.05);
  const double x0 = xs.front(), x1 = xs.back();

  std::ostringstream s;
  s << svg_header(title) << axis_and_legend(series);
  s << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 16
    << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << x_label << "</text>\n";
  for (size_t i = 0; i < xs.size(); ++i) {
    const double px = plot_x(x1 > x0 ? (xs[i] - x0) / (x1 - x0) : 0.5);
    s << "<text x=\"" << fmt_fixed(px, 1) << "\" y=\"" << kH - kMargin + 16
      << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << fmt_fixed(xs[i], 0)
      << "</text>\n";
  }
  for (double tick = 0.0; tick <= 1.0001; tick += 0.25) {
    const double v = lo + tick * (hi - lo);
    s << "<text x=\"" << kMargin - 8 << "\" y=\"" << fmt_fixed(plot_y(v, lo, hi) + 4, 1)
      << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << fmt_fixed(v, 2)
      << "</text>\n";
  }
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& ys = series[si].second;
    s << "<polyline fill=\"none\" stroke=\"" << kColors[si % 3] << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < xs.size(); ++i) {
      const double px = plot_x(x1 > x0 ? (xs[i] - x0) / (x1 - x0) : 0.5);
      s << fmt_fixed(px, 1) << ',' << fmt_fixed(plot_y(ys[i], lo, hi), 1) << ' ';
    }
    s << "\"/>\n";
    for (size_t i = 0; i < xs.size(); ++i) {
      const double px = plot_x(x1 > x0 ? (xs[i] - x0) / (x1 - x0) : 0.5);
      s << "<circle cx=\"" << fmt_fixed(px, 1) << "\" cy=\"" << fmt_fixed(plot_y(ys[i], lo, hi), 1)
        << "\" r=\"3\" fill=\"" << kColors[si % 3] << "\"/>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& variants,
                          const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  require(!variants.empty(), ErrorKind::Data, "bar chart needs at least one variant");
  double hi = 0;
  for (const auto& [name, ys] : series) {
    require(ys.size() == variants.size(), ErrorKind::Data, "series length mismatch");
    for (double y : ys) hi = std::max(hi, y);
  }
  hi = std::min(1.0, hi + 0.05);

  std::ostringstream s;
  s << svg_header(title) << axis_and_legend(series);
  const double group_w = (kW - 1.5 * kMargin) / static_cast<double>(variants.size());
  const double bar_w = group_w / static_cast<double>(series.size() + 1);
  for (size_t vi = 0; vi < variants.size(); ++vi) {
    const double gx = kMargin + group_w * static_cast<double>(vi);
    s << "<text x=\"" << fmt_fixed(gx + group_w / 2, 1) << "\" y=\"" << kH - kMargin + 16
      << "\" text-anchor=\"middle\" font-size=\"10\" font-family=\"sans-serif\">" << variants[vi]
      << "</text>\n";
    for (size_t si = 0; si < series.size(); ++si) {
      const double v = series[si].second[vi];
      const double bh = (v / hi) * (kH - 1.5 * kMargin);
      s << "<rect x=\"" << fmt_fixed(gx + bar_w * (static_cast<double>(si) + 0.5), 1) << "\" y=\""
        << fmt_fixed(kH - kMargin - bh, 1) << "\" width=\"" << fmt_fixed(bar_w * 0.9, 1)
        << "\" height=\"" << fmt_fixed(bh, 1) << "\" fill=\"" << kColors[si % 3] << "\"/>\n";
    }
  }
  for (double tick = 0.0; tick <= 1.0001; tick += 0.25) {
    const double v = tick * hi;
    const double py = (kH - kMargin) - tick * (kH - 1.5 * kMargin);
    s << "<text x=\"" << kMargin - 8 << "\" y=\"" << fmt_fixed(py + 4, 1)
      << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << fmt_fixed(v, 2)
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void generate_report(const std::string& results_dir, const std::string& out_dir) {
  require(fs::is_directory(results_dir), ErrorKind::Data, "results directory missing: " + results_dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(results_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() >= 13 && name.substr(name.size() - 13) == "aggregate.csv") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  require(!files.empty(), ErrorKind::Data, "no aggregate CSVs found in " + results_dir);

  std::map<std::string, std::vector<AggregateRow>> by_suite;
  for (const auto& f : files) {
    for (auto& row : parse_aggregate_csv(read_file(f))) by_suite[row.suite].push_back(row);
  }

  fs::create_directories(out_dir);
  std::ostringstream md;
  md << "# Results\n";
  for (const auto& [suite, rows] : by_suite) {
    md << "\n## " << suite << "\n\n";
    md << "| variant | ACC | BCA | weighted F1 |\n";
    md << "|---|---|---|---|\n";
    for (const auto& r : rows) {
      md << "| " << r.variant << " | " << fmt_fixed(r.acc_mean, 3) << " ± " << fmt_fixed(r.acc_std, 3)
         << " | " << fmt_fixed(r.bca_mean, 3) << " ± " << fmt_fixed(r.bca_std, 3) << " | "
         << fmt_fixed(r.f1_mean, 3) << " ± " << fmt_fixed(r.f1_std, 3) << " |\n";
    }

    std::vector<std::pair<std::string, std::vector<double>>> series(3);
    series[0].first = "ACC";
    series[1].first = "BCA";
    series[2].first = "weighted F1";
    std::vector<std::string> variants;
    std::vector<double> xs;
    bool numeric_x = true;
    for (const auto& r : rows) {
      variants.push_back(r.variant);
      series[0].second.push_back(r.acc_mean);
      series[1].second.push_back(r.bca_mean);
      series[2].second.push_back(r.f1_mean);
      const auto eq = r.variant.find('=');
      if (eq == std::string::npos) {
        numeric_x = false;
      } else {
        try {
          xs.push_back(std::stod(r.variant.substr(eq + 1)));
        } catch (...) {
          numeric_x = false;
        }
      }
    }
    const std::string svg = (numeric_x && xs.size() >= 2)
                                ? line_chart_svg(suite, "parameter", xs, series)
                                : bar_chart_svg(suite, variants, series);
    write_file((fs::path(out_dir) / (suite + "_chart.svg")).string(), svg);
  }
  write_file((fs::path(out_dir) / "tables.md").string(), md.str());
}

}  // namespace mbmd
