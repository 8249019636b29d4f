#include "evalign/io.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "evalign/errors.hpp"

namespace evalign::io {

namespace {

using nlohmann::json;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim surrounding whitespace
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') {
    fields.emplace_back();
  }
  return fields;
}

double parse_double(const std::string& s, const std::string& path) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw IoError(path + ": cannot parse number '" + s + "'");
  }
  return v;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open '" + path + "'");
  }
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    rows.push_back(split_csv_line(line));
  }
  if (rows.empty()) {
    throw IoError("'" + path + "' is empty");
  }
  return rows;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_text_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) {
      throw IoError("cannot write '" + tmp + "'");
    }
    out << content;
    if (!out.good()) {
      throw IoError("write failed for '" + tmp + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw IoError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
  }
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open '" + path + "'");
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Ensemble> read_ensembles_csv(const std::string& path) {
  const auto rows = read_csv(path);
  const auto& header = rows.front();
  if (header.size() >= 3 && header[0] == "instance_id" && header[1] == "kind") {
    // long format
    std::vector<Ensemble> out;
    std::vector<std::string> order;
    std::unordered_map<std::string, std::size_t> index;
    std::unordered_map<std::string, bool> has_obs;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const auto& row = rows[r];
      if (row.size() != 3) {
        throw IoError(path + ": long-format row needs 3 fields");
      }
      auto it = index.find(row[0]);
      if (it == index.end()) {
        it = index.emplace(row[0], out.size()).first;
        out.push_back(Ensemble{{}, 0.0, row[0]});
        has_obs[row[0]] = false;
      }
      Ensemble& ens = out[it->second];
      const double v = parse_double(row[2], path);
      if (row[1] == "sample") {
        ens.samples.push_back(v);
      } else if (row[1] == "obs") {
        if (has_obs[row[0]]) {
          throw IoError(path + ": duplicate obs for instance '" + row[0] + "'");
        }
        ens.observation = v;
        has_obs[row[0]] = true;
      } else {
        throw IoError(path + ": kind must be sample or obs, got '" + row[1] + "'");
      }
    }
    for (const Ensemble& ens : out) {
      if (!has_obs[ens.instance_id]) {
        throw IoError(path + ": instance '" + ens.instance_id + "' has no obs row");
      }
      if (ens.samples.empty()) {
        throw IoError(path + ": instance '" + ens.instance_id + "' has no samples");
      }
    }
    return out;
  }
  if (header.size() >= 3 && header[0] == "instance_id" && header[1] == "y") {
    // wide format
    const std::size_t m = header.size() - 2;
    std::vector<Ensemble> out;
    out.reserve(rows.size() - 1);
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const auto& row = rows[r];
      if (row.size() != header.size()) {
        throw IoError(path + ": wide-format row width mismatch");
      }
      Ensemble ens;
      ens.instance_id = row[0];
      ens.observation = parse_double(row[1], path);
      ens.samples.reserve(m);
      for (std::size_t j = 0; j < m; ++j) {
        ens.samples.push_back(parse_double(row[2 + j], path));
      }
      out.push_back(std::move(ens));
    }
    return out;
  }
  throw IoError(path + ": unrecognized ensemble CSV header");
}

void write_ensembles_csv_wide(const std::string& path, std::span<const Ensemble> ensembles) {
  if (ensembles.empty()) {
    throw InvalidInput("write_ensembles_csv_wide: nothing to write");
  }
  const std::size_t m = ensembles.front().samples.size();
  std::string out = "instance_id,y";
  for (std::size_t j = 1; j <= m; ++j) {
    out += ",s" + std::to_string(j);
  }
  out += "\n";
  for (const Ensemble& ens : ensembles) {
    if (ens.samples.size() != m) {
      throw InvalidInput("write_ensembles_csv_wide: ragged ensembles; use the long format");
    }
    out += ens.instance_id + "," + fmt(ens.observation);
    for (const double s : ens.samples) {
      out += "," + fmt(s);
    }
    out += "\n";
  }
  write_text_atomic(path, out);
}

void write_ensembles_csv_long(const std::string& path, std::span<const Ensemble> ensembles) {
  std::string out = "instance_id,kind,value\n";
  for (const Ensemble& ens : ensembles) {
    out += ens.instance_id + ",obs," + fmt(ens.observation) + "\n";
    for (const double s : ens.samples) {
      out += ens.instance_id + ",sample," + fmt(s) + "\n";
    }
  }
  write_text_atomic(path, out);
}

std::vector<XY> read_xy_csv(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows.front().size() < 2 || rows.front()[0] != "x" || rows.front()[1] != "y") {
    throw IoError(path + ": expected header x,y");
  }
  std::vector<XY> out;
  out.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < 2) {
      throw IoError(path + ": row needs 2 fields");
    }
    out.push_back({parse_double(rows[r][0], path), parse_double(rows[r][1], path)});
  }
  return out;
}

void write_xy_csv(const std::string& path, std::span<const XY> rows) {
  std::string out = "x,y\n";
  for (const XY& p : rows) {
    out += fmt(p.x) + "," + fmt(p.y) + "\n";
  }
  write_text_atomic(path, out);
}

std::vector<MonthRecord> read_demand_csv(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows.front().size() < 3 || rows.front()[0] != "month_index") {
    throw IoError(path + ": expected header month_index,demand,price");
  }
  std::vector<MonthRecord> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < 3) {
      throw IoError(path + ": row needs 3 fields");
    }
    MonthRecord rec;
    rec.month = static_cast<int>(parse_double(rows[r][0], path));
    rec.demand = parse_double(rows[r][1], path);
    rec.price = parse_double(rows[r][2], path);
    out.push_back(rec);
  }
  return out;
}

void write_demand_csv(const std::string& path, std::span<const MonthRecord> rows) {
  std::string out = "month_index,demand,price\n";
  for (const MonthRecord& rec : rows) {
    out += std::to_string(rec.month) + "," + fmt(rec.demand) + "," + fmt(rec.price) + "\n";
  }
  write_text_atomic(path, out);
}

std::vector<NewsvendorParams> read_params_csv(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows.front().size() < 3 || rows.front()[0] != "p") {
    throw IoError(path + ": expected header p,c,h");
  }
  std::vector<NewsvendorParams> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < 3) {
      throw IoError(path + ": row needs 3 fields");
    }
    out.push_back({parse_double(rows[r][0], path), parse_double(rows[r][1], path),
                   parse_double(rows[r][2], path)});
  }
  return out;
}

void write_params_csv(const std::string& path, std::span<const NewsvendorParams> rows) {
  std::string out = "p,c,h\n";
  for (const NewsvendorParams& p : rows) {
    out += fmt(p.price) + "," + fmt(p.cost) + "," + fmt(p.holding) + "\n";
  }
  write_text_atomic(path, out);
}

std::vector<ScoreRow> read_scores_csv(const std::string& path) {
  const auto rows = read_csv(path);
  const auto& header = rows.front();
  if (header.size() < 2 || header[0] != "instance_id" || header[1] != "s_d") {
    throw IoError(path + ": expected header instance_id,s_d[,action,p,c,h]");
  }
  const bool full = header.size() >= 6;
  std::vector<ScoreRow> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() < 2) {
      throw IoError(path + ": row needs at least 2 fields");
    }
    ScoreRow sr;
    sr.instance_id = row[0];
    sr.s_d = parse_double(row[1], path);
    if (full && row.size() >= 6 && !row[2].empty()) {
      sr.action = parse_double(row[2], path);
      sr.params = NewsvendorParams{parse_double(row[3], path), parse_double(row[4], path),
                                   parse_double(row[5], path)};
    }
    out.push_back(std::move(sr));
  }
  return out;
}

void write_scores_csv(const std::string& path, std::span<const ScoreRow> rows) {
  std::string out = "instance_id,s_d,action,p,c,h\n";
  for (const ScoreRow& sr : rows) {
    out += sr.instance_id + "," + fmt(sr.s_d) + ",";
    if (sr.action.has_value()) {
      out += fmt(*sr.action);
    }
    out += ",";
    if (sr.params.has_value()) {
      out += fmt(sr.params->price) + "," + fmt(sr.params->cost) + "," + fmt(sr.params->holding);
    } else {
      out += ",,";
    }
    out += "\n";
  }
  write_text_atomic(path, out);
}

void write_trace_csv(const std::string& path, std::span<const EpochStats> trace) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const EpochStats& e : trace) {
    out += std::to_string(e.epoch) + "," + fmt(e.train_loss) + "," + fmt(e.val_loss) + "\n";
  }
  write_text_atomic(path, out);
}

void write_grid_csv(const std::string& path, std::span<const GridRow> rows) {
  std::string out = "z,nu,w\n";
  for (const GridRow& r : rows) {
    out += fmt(r.z) + "," + fmt(r.nu) + "," + fmt(r.w) + "\n";
  }
  write_text_atomic(path, out);
}

std::vector<GridRow> read_grid_csv(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows.front().size() < 3 || rows.front()[0] != "z") {
    throw IoError(path + ": expected header z,nu,w");
  }
  std::vector<GridRow> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    out.push_back({parse_double(rows[r][0], path), parse_double(rows[r][1], path),
                   parse_double(rows[r][2], path)});
  }
  return out;
}

void write_curve_csv(const std::string& path, std::span<const CurveRow> rows, double tau) {
  std::string out = "s_x,s_d,rank_x,rank_d\n";
  for (const CurveRow& r : rows) {
    out += fmt(r.s_x) + "," + fmt(r.s_d) + "," + std::to_string(r.rank_x) + "," +
           std::to_string(r.rank_d) + "\n";
  }
  out += "kendall_tau," + fmt(tau) + ",,\n";
  write_text_atomic(path, out);
}

namespace {

json dense_to_json(const MonotoneDense& layer) {
  json kinds = json::array();
  for (const UnitKind k : layer.kinds) {
    kinds.push_back(k == UnitKind::kConvex ? "convex"
                                           : (k == UnitKind::kConcave ? "concave" : "bounded"));
  }
  return json{{"fan_in", layer.fan_in},
              {"fan_out", layer.fan_out},
              {"activation", to_string(layer.activation)},
              {"raw_weights", layer.raw_weights},
              {"bias", layer.bias},
              {"kinds", kinds}};
}

MonotoneDense dense_from_json(const json& j) {
  MonotoneDense layer;
  layer.fan_in = j.at("fan_in").get<int>();
  layer.fan_out = j.at("fan_out").get<int>();
  layer.activation = activation_from_string(j.at("activation").get<std::string>());
  layer.raw_weights = j.at("raw_weights").get<std::vector<double>>();
  layer.bias = j.at("bias").get<std::vector<double>>();
  for (const auto& k : j.at("kinds")) {
    const std::string name = k.get<std::string>();
    layer.kinds.push_back(name == "convex" ? UnitKind::kConvex
                                           : (name == "concave" ? UnitKind::kConcave
                                                                : UnitKind::kBounded));
  }
  if (layer.raw_weights.size() !=
          static_cast<std::size_t>(layer.fan_in) * static_cast<std::size_t>(layer.fan_out) ||
      layer.bias.size() != static_cast<std::size_t>(layer.fan_out) ||
      layer.kinds.size() != static_cast<std::size_t>(layer.fan_out)) {
    throw IoError("alignment checkpoint: layer shape mismatch");
  }
  return layer;
}

json block_to_json(const MonotoneBlock& block) {
  json layers = json::array();
  for (const MonotoneDense& layer : block.layers) {
    layers.push_back(dense_to_json(layer));
  }
  return json{{"layers", layers},
              {"raw_combiner", block.raw_combiner},
              {"log_scale", block.log_scale},
              {"offset", block.offset}};
}

MonotoneBlock block_from_json(const json& j) {
  MonotoneBlock block;
  for (const auto& layer : j.at("layers")) {
    block.layers.push_back(dense_from_json(layer));
  }
  block.raw_combiner = j.at("raw_combiner").get<std::vector<double>>();
  block.log_scale = j.at("log_scale").get<double>();
  block.offset = j.at("offset").get<double>();
  return block;
}

json block_config_to_json(const MonotoneBlockConfig& cfg) {
  return json{{"hidden", cfg.hidden}, {"activation", to_string(cfg.activation)}};
}

MonotoneBlockConfig block_config_from_json(const json& j) {
  MonotoneBlockConfig cfg;
  cfg.hidden = j.at("hidden").get<std::vector<int>>();
  cfg.activation = activation_from_string(j.at("activation").get<std::string>());
  return cfg;
}

constexpr int kCheckpointVersion = 1;

}  // namespace

void write_alignment_net(const std::string& path, const AlignmentNet& net) {
  json j;
  j["format"] = "evalign-alignment-net";
  j["version"] = kCheckpointVersion;
  j["config"] = {{"nu", block_config_to_json(net.config.nu)},
                 {"monotone_head", net.config.monotone_head},
                 {"head", block_config_to_json(net.config.head)},
                 {"op", net.config.op == ScoreOperator::kTwCrps ? "twcrps" : "quad_mean"}};
  j["nu"] = block_to_json(net.nu);
  if (const auto* affine = std::get_if<AffineHead>(&net.head)) {
    j["head"] = {{"kind", "affine"}, {"log_w", affine->log_w}, {"bias", affine->bias}};
  } else {
    j["head"] = {{"kind", "monotone"}, {"block", block_to_json(std::get<MonotoneBlock>(net.head))}};
  }
  j["input_center"] = net.input_center;
  j["input_scale"] = net.input_scale;
  j["target_center"] = net.target_center;
  j["target_scale"] = net.target_scale;
  j["trained_m"] = net.trained_m;
  write_text_atomic(path, j.dump(2) + "\n");
}

AlignmentNet read_alignment_net(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  try {
    if (j.at("format") != "evalign-alignment-net" || j.at("version").get<int>() != kCheckpointVersion) {
      throw IoError(path + ": unsupported checkpoint format/version");
    }
    AlignmentNet net;
    net.config.nu = block_config_from_json(j.at("config").at("nu"));
    net.config.monotone_head = j.at("config").at("monotone_head").get<bool>();
    net.config.head = block_config_from_json(j.at("config").at("head"));
    net.config.op = j.at("config").at("op") == "twcrps" ? ScoreOperator::kTwCrps
                                                        : ScoreOperator::kQuadMean;
    net.nu = block_from_json(j.at("nu"));
    if (j.at("head").at("kind") == "affine") {
      net.head = AffineHead{j.at("head").at("log_w").get<double>(),
                            j.at("head").at("bias").get<double>()};
    } else {
      net.head = block_from_json(j.at("head").at("block"));
    }
    net.input_center = j.at("input_center").get<double>();
    net.input_scale = j.at("input_scale").get<double>();
    net.target_center = j.at("target_center").get<double>();
    net.target_scale = j.at("target_scale").get<double>();
    net.trained_m = j.at("trained_m").get<int>();
    return net;
  } catch (const json::exception& e) {
    throw IoError(path + ": malformed checkpoint: " + e.what());
  }
}

void write_regressor(const std::string& path, const GaussianRegressor& model) {
  const auto layer_json = [](const DenseLayer& layer) {
    return json{{"fan_in", layer.fan_in},
                {"fan_out", layer.fan_out},
                {"weights", layer.weights},
                {"bias", layer.bias}};
  };
  json j;
  j["format"] = "evalign-gaussian-regressor";
  j["version"] = kCheckpointVersion;
  j["l1"] = layer_json(model.l1);
  j["l2"] = layer_json(model.l2);
  j["mu_head"] = layer_json(model.mu_head);
  j["logvar_head"] = layer_json(model.logvar_head);
  write_text_atomic(path, j.dump(2) + "\n");
}

GaussianRegressor read_regressor(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  const auto layer_from = [&path](const json& lj) {
    DenseLayer layer;
    layer.fan_in = lj.at("fan_in").get<int>();
    layer.fan_out = lj.at("fan_out").get<int>();
    layer.weights = lj.at("weights").get<std::vector<double>>();
    layer.bias = lj.at("bias").get<std::vector<double>>();
    if (layer.weights.size() !=
            static_cast<std::size_t>(layer.fan_in) * static_cast<std::size_t>(layer.fan_out) ||
        layer.bias.size() != static_cast<std::size_t>(layer.fan_out)) {
      throw IoError(path + ": regressor layer shape mismatch");
    }
    return layer;
  };
  try {
    if (j.at("format") != "evalign-gaussian-regressor") {
      throw IoError(path + ": not a regressor checkpoint");
    }
    GaussianRegressor model;
    model.l1 = layer_from(j.at("l1"));
    model.l2 = layer_from(j.at("l2"));
    model.mu_head = layer_from(j.at("mu_head"));
    model.logvar_head = layer_from(j.at("logvar_head"));
    return model;
  } catch (const json::exception& e) {
    throw IoError(path + ": malformed checkpoint: " + e.what());
  }
}

}  // namespace evalign::io
