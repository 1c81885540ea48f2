#pragma once

// Linear-probe evaluation: aggregate cell embeddings to task units, fit ridge
// regression on a random train split and score R² on the held-out split.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mobclip/embedding.hpp"
#include "mobclip/errors.hpp"
#include "mobclip/random.hpp"

namespace mobclip::probe {

enum class UnitKind { point, grid, admin };

inline const char* to_string(UnitKind k) {
  switch (k) {
    case UnitKind::point: return "point";
    case UnitKind::grid: return "grid";
    case UnitKind::admin: return "admin";
  }
  return "?";
}

inline UnitKind parse_unit_kind(std::string_view s) {
  if (s == "point") return UnitKind::point;
  if (s == "grid") return UnitKind::grid;
  if (s == "admin") return UnitKind::admin;
  throw ValidationError("unknown unit kind '" + std::string(s) + "'");
}

struct TaskUnit {
  std::string id;
  std::vector<CellId> cells;
  double target = 0.0;
};

struct TaskDataset {
  std::string name;
  UnitKind kind = UnitKind::grid;
  std::vector<TaskUnit> units;

  void validate() const {
    for (const auto& u : units) {
      if (kind != UnitKind::admin && u.cells.size() != 1)
        throw ValidationError("task '" + name + "': " + to_string(kind) + " unit '" + u.id + "' must reference exactly one cell");
      if (u.cells.empty()) throw ValidationError("task '" + name + "': unit '" + u.id + "' has no cells");
      if (!std::isfinite(u.target)) throw ValidationError("task '" + name + "': non-finite target");
    }
  }
};

struct Features {
  RowMatrixXd x;
  Eigen::VectorXd y;
  std::vector<std::string> unit_ids;
  std::size_t dropped_units = 0;
  std::size_t missing_cells = 0;
};

/// Point and grid units take their cell's row; admin units take the
/// unweighted mean over member cells present in the table.
inline Features aggregate(const EmbeddingTable& emb, const TaskDataset& task) {
  task.validate();
  Features f;
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> ys;
  for (const auto& u : task.units) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(emb.dim()));
    std::size_t found = 0;
    for (CellId c : u.cells) {
      if (auto r = emb.find(c)) {
        acc += emb.row(*r);
        ++found;
      } else {
        ++f.missing_cells;
      }
    }
    if (found == 0) {
      ++f.dropped_units;
      continue;
    }
    rows.push_back(acc / static_cast<double>(found));
    ys.push_back(u.target);
    f.unit_ids.push_back(u.id);
  }
  if (rows.empty()) throw ValidationError("task '" + task.name + "': every unit was dropped (no member cells embedded)");
  f.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(emb.dim()));
  f.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    f.x.row(static_cast<Eigen::Index>(i)) = rows[i];
    f.y[static_cast<Eigen::Index>(i)] = ys[i];
  }
  return f;
}

/// Ridge model on standardized features with an unpenalized intercept.
struct RidgeModel {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;
  Eigen::VectorXd beta;  // coefficients in standardized units
  double intercept = 0.0;

  Eigen::VectorXd predict(const RowMatrixXd& x) const {
    RowMatrixXd z = x.rowwise() - mean;
    z = z.array().rowwise() / scale.array();
    return (z * beta).array() + intercept;
  }
};

/// Solves (Z^T Z + lambda I) beta = Z^T (y - mean(y)) with a Cholesky
/// factorization, Z the standardized features.
inline RidgeModel ridge_fit(const RowMatrixXd& x, const Eigen::VectorXd& y, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("ridge lambda must be >= 0");
  if (x.rows() != y.size() || x.rows() == 0) throw ValidationError("ridge: empty or mismatched design");
  RidgeModel m;
  m.mean = x.colwise().mean();
  m.scale = ((x.rowwise() - m.mean).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < m.scale.size(); ++j)
    if (!(m.scale[j] > 1e-12)) m.scale[j] = 1.0;
  RowMatrixXd z = x.rowwise() - m.mean;
  z = z.array().rowwise() / m.scale.array();
  m.intercept = y.mean();
  const Eigen::VectorXd yc = y.array() - m.intercept;
  Eigen::MatrixXd gram = z.transpose() * z;
  gram.diagonal().array() += lambda;
  const Eigen::VectorXd rhs = z.transpose() * yc;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-12)
    throw NumericError("ridge normal equations are rank-deficient; use lambda > 0");
  m.beta = llt.solve(rhs);
  return m;
}

inline double r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& pred) {
  const double mean = y.mean();
  const double ss_tot = (y.array() - mean).square().sum();
  const double ss_res = (y - pred).squaredNorm();
  if (!(ss_tot > 0.0)) throw NumericError("R² undefined: constant target on the evaluation split");
  return 1.0 - ss_res / ss_tot;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline SplitIndices train_test_split(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("test_fraction must lie in (0, 1)");
  if (n < 4) throw ValidationError("train/test split needs at least 4 rows");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0x7e57));
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 2, n - 2);
  SplitIndices s;
  s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  return s;
}

inline RowMatrixXd take_rows(const RowMatrixXd& x, const std::vector<std::size_t>& idx) {
  RowMatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(idx[k]));
  return out;
}

inline Eigen::VectorXd take(const Eigen::VectorXd& y, const std::vector<std::size_t>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out[static_cast<Eigen::Index>(k)] = y[static_cast<Eigen::Index>(idx[k])];
  return out;
}

/// Test-split R² of a ridge probe.
inline double ridge_fit_eval(const RowMatrixXd& x, const Eigen::VectorXd& y, double lambda, std::uint64_t split_seed,
                             double test_fraction = 0.2) {
  if (x.rows() < 5) throw ValidationError("ridge probe needs at least 5 rows, got " + std::to_string(x.rows()));
  const auto s = train_test_split(static_cast<std::size_t>(x.rows()), test_fraction, split_seed);
  const RidgeModel m = ridge_fit(take_rows(x, s.train), take(y, s.train), lambda);
  const RowMatrixXd xt = take_rows(x, s.test);
  return r_squared(take(y, s.test), m.predict(xt));
}

struct ProbeConfig {
  double lambda = 1.0;
  double test_fraction = 0.2;
  std::size_t trials = 10;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("probe.lambda must be >= 0");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("probe.test_fraction must lie in (0, 1)");
    if (trials == 0) throw ConfigError("probe.trials must be >= 1");
  }
};

struct ProbeReport {
  std::string task;
  std::size_t trials = 0;
  double r2_mean = 0.0;
  double r2_std = 0.0;
  std::string probe_kind = "ridge";
  std::size_t dropped_units = 0;
  std::optional<std::string> error;  // set when the task failed
  std::vector<double> r2;            // per trial
};

/// Mean and (n-1) standard deviation of per-trial R²; one failing task does
/// not stop the others.
inline std::vector<ProbeReport> run_benchmark(const EmbeddingTable& emb, const std::vector<TaskDataset>& tasks,
                                              const ProbeConfig& cfg = {}) {
  cfg.validate();
  std::vector<ProbeReport> out;
  for (const auto& task : tasks) {
    ProbeReport rep;
    rep.task = task.name;
    try {
      const Features f = aggregate(emb, task);
      rep.dropped_units = f.dropped_units;
      for (std::size_t t = 0; t < cfg.trials; ++t)
        rep.r2.push_back(ridge_fit_eval(f.x, f.y, cfg.lambda, derive_seed(cfg.seed, t), cfg.test_fraction));
      rep.trials = rep.r2.size();
      rep.r2_mean = std::accumulate(rep.r2.begin(), rep.r2.end(), 0.0) / static_cast<double>(rep.trials);
      double ss = 0.0;
      for (double r : rep.r2) ss += (r - rep.r2_mean) * (r - rep.r2_mean);
      rep.r2_std = rep.trials > 1 ? std::sqrt(ss / static_cast<double>(rep.trials - 1)) : 0.0;
    } catch (const Error& e) {
      rep.error = e.what();
    }
    out.push_back(std::move(rep));
  }
  return out;
}

/// Tab-separated table: task, mean R², std, trials; failed tasks print NA.
inline void write_report(std::ostream& os, const std::vector<ProbeReport>& reports) {
  auto num = [](double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 6);
    return std::string(buf, p);
  };
  os << "task\tr2_mean\tr2_std\ttrials\n";
  for (const auto& r : reports) {
    if (r.error)
      os << r.task << "\tNA\tNA\t0\t" << *r.error << '\n';
    else
      os << r.task << '\t' << num(r.r2_mean) << '\t' << num(r.r2_std) << '\t' << r.trials << '\n';
  }
}

/// Task file: first line is the unit kind (point|grid|admin), then rows
/// "unit_id \t cell1,cell2,... \t target".
inline TaskDataset read_task(std::istream& is, std::string name) {
  TaskDataset t;
  t.name = std::move(name);
  std::string line;
  std::int64_t lineno = 0;
  bool have_kind = false;
  while (std::getline(is, line)) {
    ++lineno;
    const auto s = io::trim(line);
    if (s.empty() || s.front() == '#') continue;
    if (!have_kind) {
      try {
        t.kind = parse_unit_kind(s);
      } catch (const ValidationError& e) {
        throw ParseError(e.what(), lineno);
      }
      have_kind = true;
      continue;
    }
    const auto cols = io::split(s, '\t');
    if (cols.size() != 3) throw ParseError("expected 'unit_id<TAB>cells<TAB>target'", lineno);
    TaskUnit u;
    u.id = std::string(io::trim(cols[0]));
    for (auto c : io::split(cols[1], ',')) u.cells.push_back(io::parse_cell(c, lineno));
    u.target = io::parse_number<double>(cols[2], lineno, "target");
    t.units.push_back(std::move(u));
  }
  if (!have_kind) throw ParseError("task file is missing its unit_kind header", lineno);
  try {
    t.validate();
  } catch (const ValidationError& e) {
    throw ParseError(e.what(), -1);
  }
  return t;
}

inline void write_task(std::ostream& os, const TaskDataset& t) {
  os << to_string(t.kind) << '\n';
  char buf[32];
  for (const auto& u : t.units) {
    os << u.id << '\t';
    for (std::size_t k = 0; k < u.cells.size(); ++k) os << (k ? "," : "") << u.cells[k].packed();
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), u.target);
    os << '\t';
    os.write(buf, p - buf);
    os << '\n';
  }
}

}  // namespace mobclip::probe
