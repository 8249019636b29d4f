#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evalign/align.hpp"
#include "evalign/downstream.hpp"
#include "evalign/ensemble.hpp"
#include "evalign/forecast.hpp"
#include "evalign/monotone.hpp"

namespace evalign::io {

// CSV is plain comma-separated, no quoting; identifiers must not contain
// commas. Doubles round-trip at full precision.

/// Reads ensembles in either documented layout, selected by header:
///   long: instance_id,kind,value   (kind is sample or obs)
///   wide: instance_id,y,s1,...,sM
std::vector<Ensemble> read_ensembles_csv(const std::string& path);

void write_ensembles_csv_wide(const std::string& path, std::span<const Ensemble> ensembles);
void write_ensembles_csv_long(const std::string& path, std::span<const Ensemble> ensembles);

/// x,y
std::vector<XY> read_xy_csv(const std::string& path);
void write_xy_csv(const std::string& path, std::span<const XY> rows);

/// month_index,demand,price
std::vector<MonthRecord> read_demand_csv(const std::string& path);
void write_demand_csv(const std::string& path, std::span<const MonthRecord> rows);

/// p,c,h per row
std::vector<NewsvendorParams> read_params_csv(const std::string& path);
void write_params_csv(const std::string& path, std::span<const NewsvendorParams> rows);

/// Downstream scores. Newsvendor scores carry the chosen action and the
/// params echo; synthetic scores leave those columns empty.
struct ScoreRow {
  std::string instance_id;
  double s_d = 0.0;
  std::optional<double> action;
  std::optional<NewsvendorParams> params;
};

std::vector<ScoreRow> read_scores_csv(const std::string& path);
void write_scores_csv(const std::string& path, std::span<const ScoreRow> rows);

/// epoch,train_loss,val_loss
void write_trace_csv(const std::string& path, std::span<const EpochStats> trace);

/// z,nu,w
struct GridRow {
  double z = 0.0;
  double nu = 0.0;
  double w = 0.0;
};
void write_grid_csv(const std::string& path, std::span<const GridRow> rows);
std::vector<GridRow> read_grid_csv(const std::string& path);

/// s_x,s_d,rank_x,rank_d sorted by s_x, then one summary row
/// "kendall_tau,<value>,,".
struct CurveRow {
  double s_x = 0.0;
  double s_d = 0.0;
  int rank_x = 0;
  int rank_d = 0;
};
void write_curve_csv(const std::string& path, std::span<const CurveRow> rows, double tau);

/// Versioned JSON checkpoints: layer shapes, raw parameters, activation
/// assignments and the architecture echo.
void write_alignment_net(const std::string& path, const AlignmentNet& net);
AlignmentNet read_alignment_net(const std::string& path);

void write_regressor(const std::string& path, const GaussianRegressor& model);
GaussianRegressor read_regressor(const std::string& path);

/// Writes via a temp file and rename, so partially written artifacts never
/// carry the final name.
void write_text_atomic(const std::string& path, const std::string& content);

std::string read_text(const std::string& path);

}  // namespace evalign::io
