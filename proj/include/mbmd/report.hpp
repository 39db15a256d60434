#pragma once

#include <string>
#include <vector>

#include "mbmd/trainer.hpp"

namespace mbmd {

struct NamedCv {
  std::string suite;
  std::string variant;
  CvResult cv;
};

/// Per-cell rows: suite,variant,fold,repeat,acc,bca,weighted_f1,trial_acc,trial_bca,trial_f1
std::string cv_rows_csv(const std::vector<NamedCv>& results);

/// Aggregates: suite,variant,acc_mean,acc_std,bca_mean,bca_std,f1_mean,f1_std
std::string cv_aggregate_csv(const std::vector<NamedCv>& results);

/// epoch,l_ce,l_distill,l_norm,l_imp,total,val_loss,val_acc,val_bca,val_f1
std::string train_log_csv(const std::vector<EpochLog>& log);

struct AggregateRow {
  std::string suite;
  std::string variant;
  double acc_mean = 0, acc_std = 0, bca_mean = 0, bca_std = 0, f1_mean = 0, f1_std = 0;
};

std::vector<AggregateRow> parse_aggregate_csv(const std::string& csv_text);

/// Deterministic standalone SVG; one polyline per metric over numeric x.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::vector<double>& xs,
                           const std::vector<std::pair<std::string, std::vector<double>>>& series);

/// Deterministic grouped bar chart over variants.
std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& variants,
                          const std::vector<std::pair<std::string, std::vector<double>>>& series);

/// Reads every *aggregate.csv under results_dir and writes tables.md plus one
/// SVG per suite into out_dir.
void generate_report(const std::string& results_dir, const std::string& out_dir);

}  // namespace mbmd
