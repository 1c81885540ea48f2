#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "mobclip/binary_io.hpp"
#include "mobclip/errors.hpp"
#include "mobclip/hexgrid.hpp"

namespace mobclip {

using hexgrid::CellId;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXd = RowMatrix<double>;

/// Dense per-cell vectors: row i belongs to ids[i].
class EmbeddingTable {
public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<CellId> ids, RowMatrixXd values) : ids_(std::move(ids)), values_(std::move(values)) {
    if (static_cast<Eigen::Index>(ids_.size()) != values_.rows())
      throw ValidationError("embedding table: id count does not match row count");
    reindex();
  }

  std::size_t rows() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(values_.cols()); }
  const std::vector<CellId>& ids() const noexcept { return ids_; }
  const RowMatrixXd& values() const noexcept { return values_; }
  RowMatrixXd& values() noexcept { return values_; }

  std::optional<std::size_t> find(CellId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  auto row(std::size_t i) const { return values_.row(static_cast<Eigen::Index>(i)); }

private:
  void reindex() {
    index_.clear();
    index_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i)
      if (!index_.emplace(ids_[i], i).second)
        throw ValidationError("embedding table: duplicate cell id " + hexgrid::to_string(ids_[i]));
  }

  std::vector<CellId> ids_;
  RowMatrixXd values_;
  std::unordered_map<CellId, std::size_t, hexgrid::CellIdHash> index_;
};

namespace io {

inline constexpr std::string_view kEmbeddingMagic = "EMB1";

/// EMB1: magic, u64 rows, u64 dim, rows x u64 cell ids, row-major f32 values.
inline void write_embeddings(std::ostream& os, const EmbeddingTable& t) {
  LeWriter w(os);
  w.magic(kEmbeddingMagic);
  w.put<std::uint64_t>(t.rows());
  w.put<std::uint64_t>(t.dim());
  for (CellId id : t.ids()) w.put<std::uint64_t>(id.packed());
  const auto& v = t.values();
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j) w.put<float>(static_cast<float>(v(i, j)));
  w.check();
}

inline EmbeddingTable read_embeddings(std::istream& is) {
  LeReader r(is);
  r.expect_magic(kEmbeddingMagic);
  const auto rows = r.get<std::uint64_t>();
  const auto dim_at = r.offset();
  const auto dim = r.get<std::uint64_t>();
  if (rows > (std::uint64_t{1} << 32) || dim > (std::uint64_t{1} << 20))
    throw ParseError("implausible embedding shape", -1, dim_at);
  std::vector<CellId> ids(rows);
  for (auto& id : ids) id = CellId(r.get<std::uint64_t>());
  RowMatrixXd values(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < values.rows(); ++i)
    for (Eigen::Index j = 0; j < values.cols(); ++j) values(i, j) = r.get<float>();
  r.expect_eof();
  return EmbeddingTable(std::move(ids), std::move(values));
}

inline void save_embeddings(const std::string& path, const EmbeddingTable& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_embeddings(os, t);
}

inline EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read_embeddings(is);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view field, std::int64_t line, const char* what) {
  field = trim(field);
  T value{};
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc{} || ptr != end || field.empty())
    throw ParseError(std::string("invalid ") + what + " '" + std::string(field) + "'", line);
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw ParseError(std::string("non-finite ") + what, line);
  }
  return value;
}

inline CellId parse_cell(std::string_view field, std::int64_t line) {
  return CellId(parse_number<std::uint64_t>(field, line, "cell id"));
}

/// Text vector table: "cell_id \t v1,v2,...". Blank lines and '#' comments
/// are skipped; every row must have the same length.
inline EmbeddingTable read_vector_table(std::istream& is) {
  std::vector<CellId> ids;
  std::vector<double> flat;
  std::size_t dim = 0;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto cols = split(s, '\t');
    if (cols.size() != 2) throw ParseError("expected 'cell_id<TAB>v1,v2,...'", lineno);
    ids.push_back(parse_cell(cols[0], lineno));
    const auto vals = split(cols[1], ',');
    if (dim == 0) dim = vals.size();
    if (vals.size() != dim)
      throw ParseError("row has " + std::to_string(vals.size()) + " values, expected " + std::to_string(dim), lineno);
    for (auto v : vals) flat.push_back(parse_number<double>(v, lineno, "value"));
  }
  RowMatrixXd values(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < values.rows(); ++i)
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      values(i, j) = flat[static_cast<std::size_t>(i) * dim + static_cast<std::size_t>(j)];
  return EmbeddingTable(std::move(ids), std::move(values));
}

inline void write_vector_table(std::ostream& os, const EmbeddingTable& t) {
  char buf[64];
  for (std::size_t i = 0; i < t.rows(); ++i) {
    os << t.ids()[i].packed() << '\t';
    for (std::size_t j = 0; j < t.dim(); ++j) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), t.values()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      if (j) os << ',';
      os.write(buf, p - buf);
    }
    os << '\n';
  }
}

/// Loads either format, sniffing the EMB1 magic.
inline EmbeddingTable load_any_table(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  char head[4] = {};
  is.read(head, 4);
  const bool binary = is.gcount() == 4 && std::string_view(head, 4) == kEmbeddingMagic;
  is.clear();
  is.seekg(0);
  return binary ? read_embeddings(is) : read_vector_table(is);
}

}  // namespace io
}  // namespace mobclip
