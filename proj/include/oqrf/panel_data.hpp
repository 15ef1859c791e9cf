#pragma once

#include "oqrf/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace oqrf {

struct Observation {
  double y = 0.0;
  std::vector<double> t;
  std::vector<double> w;
};

struct SubjectRecord {
  std::string id;
  std::vector<double> x;
  std::vector<Observation> obs;
};

/// Longitudinal dataset: subjects in insertion order, each with m_i >= 1
/// observation rows (y, t, w) and one modifier vector x. Rows are stored flat
/// and contiguously per subject. Column 0 of w is the intercept (== 1).
/// Immutable after construction.
class PanelDataset {
 public:
  PanelDataset() = default;

  /// Validates dimensions, finiteness, intercept column and id uniqueness.
  static PanelDataset from_subjects(const std::vector<SubjectRecord>& subjects);

  std::size_t n_subjects() const noexcept { return ids_.size(); }
  std::size_t n_rows() const noexcept { return static_cast<std::size_t>(y_.size()); }
  std::size_t p_t() const noexcept { return p_t_; }
  std::size_t p_w() const noexcept { return p_w_; }
  std::size_t p_x() const noexcept { return p_x_; }

  const std::string& id(std::size_t i) const { return ids_[i]; }
  std::size_t m(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }
  std::size_t row_begin(std::size_t i) const { return offsets_[i]; }
  std::size_t row_end(std::size_t i) const { return offsets_[i + 1]; }

  const RowMatrix& x() const noexcept { return x_; }
  const Vector& y() const noexcept { return y_; }
  const RowMatrix& t() const noexcept { return t_; }
  const RowMatrix& w() const noexcept { return w_; }

  SubjectRecord subject(std::size_t i) const;

  /// New dataset holding the listed subjects in the given order. Repeated
  /// indices (bootstrap draws) get their ids suffixed with "#k".
  PanelDataset subset(std::span<const std::size_t> subjects) const;

 private:
  std::size_t p_t_ = 0, p_w_ = 0, p_x_ = 0;
  std::vector<std::string> ids_;
  std::vector<std::size_t> offsets_{0};
  RowMatrix x_;
  Vector y_;
  RowMatrix t_;
  RowMatrix w_;
};

/// 1 / m_i: every subject carries unit total weight across its rows.
double obs_weight(const SubjectRecord& subject);
double obs_weight(const PanelDataset& data, std::size_t subject);

struct SubjectSplit {
  std::vector<std::size_t> d1;  // nuisance half
  std::vector<std::size_t> d2;  // effect half
};

/// Uniform random halving of subject indices; |d1| = floor(n/2). Both halves
/// are returned in ascending index order.
SubjectSplit split_subjects(const PanelDataset& data, std::uint64_t seed);

/// Column mapping for CSV ingestion. Column names are matched exactly.
struct CsvSchema {
  std::string subject_col = "subject_id";
  std::string y_col = "y";
  std::vector<std::string> t_cols;
  std::vector<std::string> w_cols;
  std::vector<std::string> x_cols;
  /// Prepend a constant-1 confounder column (w_0) to every row.
  bool add_intercept = false;

  /// subject_id, y, t_1..t_pt, w_1..w_pw, x_1..x_px
  static CsvSchema canonical(std::size_t p_t, std::size_t p_w, std::size_t p_x, bool add_intercept);
  /// Picks every header column matching t_<k>, w_<k>, x_<k>, ordered by k.
  static CsvSchema infer(const std::vector<std::string>& header, bool add_intercept);
};

std::vector<std::string> read_csv_header(const std::string& path);

/// Reads a panel CSV. Lines starting with '#' before the header are skipped.
/// Rows sharing a subject_id are merged under the first appearance.
PanelDataset read_csv(std::istream& in, const CsvSchema& schema);
PanelDataset load_csv(const std::string& path, const CsvSchema& schema);

/// Canonical CSV with full round-trip precision; the intercept is written as
/// w_1. `comment`, when non-empty, is emitted as a leading '#' line.
void write_csv(std::ostream& out, const PanelDataset& data, const std::string& comment = {});

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace oqrf
