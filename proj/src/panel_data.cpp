#include "oqrf/panel_data.hpp"

#include "oqrf/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

namespace oqrf {

namespace {

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double d) { return std::isfinite(d); });
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

double parse_number(std::string_view field, std::size_t line, const std::string& column) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (field.empty() || ec != std::errc() || ptr != last) {
    throw ParseError("cannot parse '" + std::string(field) + "' in column " + column, line);
  }
  return v;
}

// Index-sorted list of (k, name) for columns named <prefix>_<k>.
std::vector<std::string> numbered_columns(const std::vector<std::string>& header, const std::string& prefix) {
  std::map<long, std::string> found;
  for (const auto& h : header) {
    if (h.size() <= prefix.size() + 1 || h.compare(0, prefix.size(), prefix) != 0 || h[prefix.size()] != '_') continue;
    std::string_view rest(h.c_str() + prefix.size() + 1);
    long k = 0;
    auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), k);
    if (ec == std::errc() && ptr == rest.data() + rest.size()) found.emplace(k, h);
  }
  std::vector<std::string> out;
  for (auto& [k, name] : found) out.push_back(name);
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

PanelDataset PanelDataset::from_subjects(const std::vector<SubjectRecord>& subjects) {
  PanelDataset d;
  if (subjects.empty()) throw ValidationError("dataset has no subjects");
  const auto& first = subjects.front();
  if (first.obs.empty()) throw ValidationError("subject '" + first.id + "' has no observations");
  d.p_t_ = first.obs.front().t.size();
  d.p_w_ = first.obs.front().w.size();
  d.p_x_ = first.x.size();
  if (d.p_t_ == 0) throw ValidationError("treatment dimension must be >= 1");
  if (d.p_w_ == 0) throw ValidationError("confounder dimension must be >= 1 (intercept)");

  std::size_t rows = 0;
  std::unordered_set<std::string> seen;
  for (const auto& s : subjects) {
    if (!seen.insert(s.id).second) throw ValidationError("duplicate subject id '" + s.id + "'");
    if (s.obs.empty()) throw ValidationError("subject '" + s.id + "' has no observations");
    if (s.x.size() != d.p_x_) throw ValidationError("subject '" + s.id + "' has wrong modifier dimension");
    if (!all_finite(s.x)) throw ValidationError("subject '" + s.id + "' has non-finite modifier value");
    for (const auto& o : s.obs) {
      if (o.t.size() != d.p_t_ || o.w.size() != d.p_w_) {
        throw ValidationError("subject '" + s.id + "' has an observation with wrong dimensions");
      }
      if (!std::isfinite(o.y) || !all_finite(o.t) || !all_finite(o.w)) {
        throw ValidationError("subject '" + s.id + "' has a non-finite observation value");
      }
      if (o.w[0] != 1.0) throw ValidationError("subject '" + s.id + "': first confounder column must be 1");
    }
    rows += s.obs.size();
  }

  const auto n = subjects.size();
  d.ids_.reserve(n);
  d.offsets_.assign(1, 0);
  d.x_.resize(static_cast<Index>(n), static_cast<Index>(d.p_x_));
  d.y_.resize(static_cast<Index>(rows));
  d.t_.resize(static_cast<Index>(rows), static_cast<Index>(d.p_t_));
  d.w_.resize(static_cast<Index>(rows), static_cast<Index>(d.p_w_));
  Index r = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = subjects[i];
    d.ids_.push_back(s.id);
    for (std::size_t k = 0; k < d.p_x_; ++k) d.x_(static_cast<Index>(i), static_cast<Index>(k)) = s.x[k];
    for (const auto& o : s.obs) {
      d.y_(r) = o.y;
      for (std::size_t k = 0; k < d.p_t_; ++k) d.t_(r, static_cast<Index>(k)) = o.t[k];
      for (std::size_t k = 0; k < d.p_w_; ++k) d.w_(r, static_cast<Index>(k)) = o.w[k];
      ++r;
    }
    d.offsets_.push_back(static_cast<std::size_t>(r));
  }
  return d;
}

SubjectRecord PanelDataset::subject(std::size_t i) const {
  SubjectRecord s;
  s.id = ids_[i];
  s.x.assign(x_.row(static_cast<Index>(i)).data(), x_.row(static_cast<Index>(i)).data() + p_x_);
  for (std::size_t r = offsets_[i]; r < offsets_[i + 1]; ++r) {
    const auto ri = static_cast<Index>(r);
    Observation o;
    o.y = y_(ri);
    o.t.assign(t_.row(ri).data(), t_.row(ri).data() + p_t_);
    o.w.assign(w_.row(ri).data(), w_.row(ri).data() + p_w_);
    s.obs.push_back(std::move(o));
  }
  return s;
}

PanelDataset PanelDataset::subset(std::span<const std::size_t> subjects) const {
  PanelDataset d;
  d.p_t_ = p_t_;
  d.p_w_ = p_w_;
  d.p_x_ = p_x_;
  std::size_t rows = 0;
  for (auto i : subjects) {
    if (i >= n_subjects()) throw ValidationError("subset index out of range");
    rows += m(i);
  }
  d.x_.resize(static_cast<Index>(subjects.size()), static_cast<Index>(p_x_));
  d.y_.resize(static_cast<Index>(rows));
  d.t_.resize(static_cast<Index>(rows), static_cast<Index>(p_t_));
  d.w_.resize(static_cast<Index>(rows), static_cast<Index>(p_w_));
  std::unordered_map<std::size_t, int> copies;
  Index r = 0;
  for (std::size_t k = 0; k < subjects.size(); ++k) {
    const auto i = subjects[k];
    const int c = copies[i]++;
    d.ids_.push_back(c == 0 ? ids_[i] : ids_[i] + "#" + std::to_string(c));
    d.x_.row(static_cast<Index>(k)) = x_.row(static_cast<Index>(i));
    const auto b = static_cast<Index>(offsets_[i]);
    const auto len = static_cast<Index>(m(i));
    d.y_.segment(r, len) = y_.segment(b, len);
    d.t_.middleRows(r, len) = t_.middleRows(b, len);
    d.w_.middleRows(r, len) = w_.middleRows(b, len);
    r += len;
    d.offsets_.push_back(static_cast<std::size_t>(r));
  }
  return d;
}

double obs_weight(const SubjectRecord& subject) { return 1.0 / static_cast<double>(subject.obs.size()); }

double obs_weight(const PanelDataset& data, std::size_t subject) {
  return 1.0 / static_cast<double>(data.m(subject));
}

SubjectSplit split_subjects(const PanelDataset& data, std::uint64_t seed) {
  const auto n = data.n_subjects();
  if (n < 2) throw ValidationError("split_subjects needs at least 2 subjects");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  SubjectSplit s;
  s.d1.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n / 2));
  s.d2.assign(idx.begin() + static_cast<std::ptrdiff_t>(n / 2), idx.end());
  std::sort(s.d1.begin(), s.d1.end());
  std::sort(s.d2.begin(), s.d2.end());
  return s;
}

CsvSchema CsvSchema::canonical(std::size_t p_t, std::size_t p_w, std::size_t p_x, bool add_intercept) {
  CsvSchema s;
  s.add_intercept = add_intercept;
  for (std::size_t k = 1; k <= p_t; ++k) s.t_cols.push_back("t_" + std::to_string(k));
  for (std::size_t k = 1; k <= p_w; ++k) s.w_cols.push_back("w_" + std::to_string(k));
  for (std::size_t k = 1; k <= p_x; ++k) s.x_cols.push_back("x_" + std::to_string(k));
  return s;
}

CsvSchema CsvSchema::infer(const std::vector<std::string>& header, bool add_intercept) {
  CsvSchema s;
  s.add_intercept = add_intercept;
  s.t_cols = numbered_columns(header, "t");
  s.w_cols = numbered_columns(header, "w");
  s.x_cols = numbered_columns(header, "x");
  return s;
}

namespace {

bool next_data_line(std::istream& in, std::string& line, std::size_t& lineno, bool skip_comments) {
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view v = trim(line);
    if (v.empty()) continue;
    if (skip_comments && v.front() == '#') continue;
    return true;
  }
  return false;
}

}  // namespace

std::vector<std::string> read_csv_header(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  if (!next_data_line(in, line, lineno, true)) throw SchemaError("'" + path + "' has no header row");
  std::vector<std::string> header;
  for (auto f : split_fields(line)) header.emplace_back(f);
  return header;
}

PanelDataset read_csv(std::istream& in, const CsvSchema& schema) {
  std::string line;
  std::size_t lineno = 0;
  if (!next_data_line(in, line, lineno, true)) throw SchemaError("CSV input has no header row");
  std::vector<std::string> header;
  for (auto f : split_fields(line)) header.emplace_back(f);

  auto locate = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_col = locate(schema.subject_col);
  const std::size_t y_col = locate(schema.y_col);
  std::vector<std::size_t> t_idx, w_idx, x_idx;
  for (const auto& c : schema.t_cols) t_idx.push_back(locate(c));
  for (const auto& c : schema.w_cols) w_idx.push_back(locate(c));
  for (const auto& c : schema.x_cols) x_idx.push_back(locate(c));
  if (t_idx.empty()) throw SchemaError("schema lists no treatment columns");

  std::vector<SubjectRecord> subjects;
  std::unordered_map<std::string, std::size_t> where;
  while (next_data_line(in, line, lineno, false)) {
    auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()),
                       lineno);
    }
    std::string id(fields[id_col]);
    if (id.empty()) throw ParseError("empty subject id", lineno);
    Observation o;
    o.y = parse_number(fields[y_col], lineno, schema.y_col);
    for (std::size_t k = 0; k < t_idx.size(); ++k) o.t.push_back(parse_number(fields[t_idx[k]], lineno, schema.t_cols[k]));
    if (schema.add_intercept) o.w.push_back(1.0);
    for (std::size_t k = 0; k < w_idx.size(); ++k) o.w.push_back(parse_number(fields[w_idx[k]], lineno, schema.w_cols[k]));
    std::vector<double> x;
    for (std::size_t k = 0; k < x_idx.size(); ++k) x.push_back(parse_number(fields[x_idx[k]], lineno, schema.x_cols[k]));

    if (!std::isfinite(o.y) || !all_finite(o.t) || !all_finite(o.w) || !all_finite(x)) {
      throw ValidationError("non-finite value on line " + std::to_string(lineno));
    }
    auto [it, inserted] = where.emplace(id, subjects.size());
    if (inserted) {
      subjects.push_back(SubjectRecord{id, std::move(x), {}});
    } else if (subjects[it->second].x != x) {
      throw ValidationError("subject '" + id + "' has inconsistent modifiers on line " + std::to_string(lineno));
    }
    subjects[it->second].obs.push_back(std::move(o));
  }
  if (subjects.empty()) throw ValidationError("CSV input has no data rows");
  return PanelDataset::from_subjects(subjects);
}

PanelDataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return read_csv(in, schema);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.line());
  } catch (const SchemaError& e) {
    throw SchemaError(path + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

void write_csv(std::ostream& out, const PanelDataset& data, const std::string& comment) {
  if (!comment.empty()) out << "# " << comment << "\n";
  out << "subject_id,y";
  for (std::size_t k = 1; k <= data.p_t(); ++k) out << ",t_" << k;
  for (std::size_t k = 1; k <= data.p_w(); ++k) out << ",w_" << k;
  for (std::size_t k = 1; k <= data.p_x(); ++k) out << ",x_" << k;
  out << "\n";
  std::string buf;
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    std::string xs;
    for (std::size_t k = 0; k < data.p_x(); ++k) {
      xs += ',';
      xs += format_double(data.x()(static_cast<Index>(i), static_cast<Index>(k)));
    }
    for (std::size_t r = data.row_begin(i); r < data.row_end(i); ++r) {
      const auto ri = static_cast<Index>(r);
      buf = data.id(i);
      buf += ',';
      buf += format_double(data.y()(ri));
      for (Index k = 0; k < data.t().cols(); ++k) {
        buf += ',';
        buf += format_double(data.t()(ri, k));
      }
      for (Index k = 0; k < data.w().cols(); ++k) {
        buf += ',';
        buf += format_double(data.w()(ri, k));
      }
      buf += xs;
      out << buf << '\n';
    }
  }
}

}  // namespace oqrf
