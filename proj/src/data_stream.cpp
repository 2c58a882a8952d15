#include "streambayes/data_stream.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "streambayes/error.hpp"
#include "streambayes/model_io.hpp"

namespace streambayes {

namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view unquote(std::string_view s) {
  if (s.size() >= 2 && (s.front() == '\'' || s.front() == '"') && s.back() == s.front()) return s.substr(1, s.size() - 2);
  return s;
}

// Splits on commas outside quotes; cells are trimmed and unquoted, and view into `line`.
void split_cells(std::string_view line, std::vector<std::string_view>& cells) {
  cells.clear();
  std::size_t start = 0;
  char quote = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i < line.size()) {
      const char c = line[i];
      if (quote) {
        if (c == quote) quote = 0;
        continue;
      }
      if (c == '\'' || c == '"') {
        quote = c;
        continue;
      }
      if (c != ',') continue;
    }
    cells.push_back(unquote(trim(line.substr(start, i - start))));
    start = i + 1;
  }
}

// Reads the next whitespace-delimited (or quoted) token from `s`.
std::string_view next_token(std::string_view& s) {
  s = trim(s);
  if (s.empty()) return {};
  std::size_t end = 0;
  if (s.front() == '\'' || s.front() == '"') {
    end = s.find(s.front(), 1);
    end = end == std::string_view::npos ? s.size() : end + 1;
  } else {
    while (end < s.size() && s[end] != ' ' && s[end] != '\t' && s[end] != '{') ++end;
  }
  auto tok = s.substr(0, end);
  s.remove_prefix(end);
  return tok;
}

bool parse_real(std::string_view cell, double& out) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size() && std::isfinite(out);
}

bool needs_quotes(std::string_view s) {
  return s.empty() || s.find_first_of(" \t,'\"{}%") != std::string_view::npos;
}

std::string arff_token(std::string_view s) {
  if (!needs_quotes(s)) return std::string(s);
  return "'" + std::string(s) + "'";
}

// Numeric labels also match other spellings of the same number ("1.0" for label "1").
std::optional<int> numeric_label_index(const StateSpace& space, std::string_view cell) {
  double x = 0.0;
  if (!parse_real(cell, x)) return std::nullopt;
  const auto& labels = space.labels();
  for (std::size_t k = 0; k < labels.size(); ++k) {
    double y = 0.0;
    if (parse_real(labels[k], y) && y == x) return static_cast<int>(k);
  }
  return std::nullopt;
}

[[noreturn]] void parse_fail(const std::string& name, std::size_t line, const std::string& what) {
  fail(ErrorCode::Parse, name + ":" + std::to_string(line) + ": " + what);
}

long integral_id(double v, const char* column, const std::string& name, std::size_t line) {
  const double r = std::round(v);
  if (is_missing(v) || std::abs(v - r) > 1e-9)
    parse_fail(name, line, std::string(column) + " value must be an integer");
  return static_cast<long>(r);
}

}  // namespace

std::optional<int> ArffHeader::find(std::string_view name) const {
  for (const auto& a : attributes)
    if (a.name == name) return a.index;
  return std::nullopt;
}

bool operator==(const DynamicDataInstance& a, const DynamicDataInstance& b) {
  if (a.sequence_id != b.sequence_id || a.time_id != b.time_id || a.values.size() != b.values.size()) return false;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const bool ma = is_missing(a.values[i]);
    if (ma != is_missing(b.values[i]) || (!ma && a.values[i] != b.values[i])) return false;
  }
  return true;
}

ArffReader::ArffReader(std::unique_ptr<std::istream> in, std::string name)
    : in_(std::move(in)), name_(std::move(name)) {
  parse_header();
}

ArffReader ArffReader::open(const std::string& path) {
  if (path == "-") {
    ArffReader r(std::make_unique<std::istream>(std::cin.rdbuf()), "<stdin>");
    return r;
  }
  auto file = std::make_unique<std::ifstream>(path);
  if (!*file) fail(ErrorCode::Io, "cannot open '" + path + "'");
  return ArffReader(std::move(file), path);
}

ArffReader ArffReader::from_string(std::string text) {
  return ArffReader(std::make_unique<std::istringstream>(std::move(text)), "<string>");
}

bool ArffReader::read_line(std::string& out) {
  while (std::getline(*in_, out)) {
    ++line_;
    const auto t = trim(out);
    if (t.empty() || t.front() == '%') continue;
    return true;
  }
  if (in_->bad()) fail(ErrorCode::Io, name_ + ": read failure");
  return false;
}

void ArffReader::parse_header() {
  std::string line;
  bool have_relation = false;
  std::set<std::string> names;
  while (true) {
    if (!read_line(line)) parse_fail(name_, line_, "missing @data section");
    std::string_view rest = trim(line);
    const auto keyword = lower(next_token(rest));
    if (keyword == "@relation") {
      if (have_relation) parse_fail(name_, line_, "duplicate @relation");
      const auto tok = trim(rest);
      header_.relation = std::string(unquote(tok));
      have_relation = true;
    } else if (keyword == "@attribute") {
      if (!have_relation) parse_fail(name_, line_, "@attribute before @relation");
      const auto name = std::string(unquote(next_token(rest)));
      if (name.empty()) parse_fail(name_, line_, "attribute without a name");
      if (!names.insert(name).second) parse_fail(name_, line_, "duplicate attribute '" + name + "'");
      rest = trim(rest);
      Attribute attr;
      attr.index = static_cast<int>(header_.attributes.size());
      attr.name = name;
      if (!rest.empty() && rest.front() == '{') {
        const auto close = rest.find('}');
        if (close == std::string_view::npos) parse_fail(name_, line_, "unterminated label set");
        std::vector<std::string_view> cells;
        split_cells(rest.substr(1, close - 1), cells);
        std::vector<std::string> labels(cells.begin(), cells.end());
        std::set<std::string> uniq(labels.begin(), labels.end());
        if (labels.size() < 2 || uniq.size() != labels.size() || uniq.count(""))
          parse_fail(name_, line_, "label set of '" + name + "' needs at least two distinct labels");
        attr.space = StateSpace::finite(std::move(labels));
      } else {
        const auto type = lower(rest);
        if (type != "real" && type != "numeric")
          parse_fail(name_, line_, "unknown attribute type '" + std::string(rest) + "'");
      }
      if (name == kSequenceIdName || name == kTimeIdName) {
        if (attr.space.is_finite()) fail(ErrorCode::Schema, name_ + ":" + std::to_string(line_) + ": " + name + " must be real");
        attr.special = name == kSequenceIdName ? SpecialAttribute::SequenceId : SpecialAttribute::TimeId;
      }
      header_.attributes.push_back(std::move(attr));
    } else if (keyword == "@data") {
      if (!have_relation) parse_fail(name_, line_, "missing @relation");
      return;
    } else {
      parse_fail(name_, line_, "unexpected header line");
    }
  }
}

std::optional<DataInstance> ArffReader::next() {
  if (!read_line(buffer_)) return std::nullopt;
  const auto t = trim(buffer_);
  if (t.front() == '{') parse_fail(name_, line_, "sparse rows are not supported");
  split_cells(t, cells_);
  const auto& attrs = header_.attributes;
  if (cells_.size() != attrs.size())
    parse_fail(name_, line_, "expected " + std::to_string(attrs.size()) + " values, found " + std::to_string(cells_.size()));
  DataInstance row(attrs.size());
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    const auto cell = cells_[i];
    if (cell == "?") {
      row[i] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    if (attrs[i].space.is_finite()) {
      auto idx = attrs[i].space.label_index(cell);
      if (!idx) idx = numeric_label_index(attrs[i].space, cell);
      if (!idx) parse_fail(name_, line_, "'" + std::string(cell) + "' is not a state of " + attrs[i].name);
      row[i] = *idx;
    } else if (!parse_real(cell, row[i])) {
      parse_fail(name_, line_, "'" + std::string(cell) + "' is not a finite real for " + attrs[i].name);
    }
  }
  return row;
}

DynamicArffReader::DynamicArffReader(ArffReader reader) : reader_(std::move(reader)) {
  header_.relation = reader_.header().relation;
  for (const auto& a : reader_.header().attributes) {
    if (a.special == SpecialAttribute::SequenceId) {
      seq_col_ = a.index;
    } else if (a.special == SpecialAttribute::TimeId) {
      time_col_ = a.index;
    } else {
      Attribute copy = a;
      copy.index = static_cast<int>(header_.attributes.size());
      header_.attributes.push_back(std::move(copy));
      keep_.push_back(a.index);
    }
  }
  if (seq_col_ < 0 || time_col_ < 0) fail(ErrorCode::Schema, "dynamic data needs SEQUENCE_ID and TIME_ID attributes");
}

std::optional<DynamicDataInstance> DynamicArffReader::next() {
  auto row = reader_.next();
  if (!row) return std::nullopt;
  DynamicDataInstance out;
  out.sequence_id = integral_id((*row)[static_cast<std::size_t>(seq_col_)], kSequenceIdName, "dynamic stream", reader_.line());
  out.time_id = integral_id((*row)[static_cast<std::size_t>(time_col_)], kTimeIdName, "dynamic stream", reader_.line());
  auto [it, fresh] = last_time_.try_emplace(out.sequence_id, out.time_id);
  if (!fresh) {
    if (out.time_id <= it->second)
      fail(ErrorCode::Order, "line " + std::to_string(reader_.line()) + ": sequence " + std::to_string(out.sequence_id) +
                                 " time id " + std::to_string(out.time_id) + " does not exceed " + std::to_string(it->second));
    it->second = out.time_id;
  }
  out.values.reserve(keep_.size());
  for (int c : keep_) out.values.push_back((*row)[static_cast<std::size_t>(c)]);
  return out;
}

void require_batch_size(std::size_t batch_size) {
  if (batch_size == 0) fail(ErrorCode::Config, "batch size must be at least 1");
}

ArffWriter::ArffWriter(std::ostream& out, ArffHeader header) : out_(out), header_(std::move(header)) {
  out_ << "@relation " << arff_token(header_.relation) << "\n\n";
  for (const auto& a : header_.attributes) {
    out_ << "@attribute " << arff_token(a.name) << ' ';
    if (a.space.is_finite()) {
      out_ << '{';
      const auto& labels = a.space.labels();
      for (std::size_t k = 0; k < labels.size(); ++k) out_ << (k ? "," : "") << arff_token(labels[k]);
      out_ << "}\n";
    } else {
      out_ << "real\n";
    }
  }
  out_ << "\n@data\n";
}

void ArffWriter::write(std::span<const double> instance) {
  const auto& attrs = header_.attributes;
  if (instance.size() != attrs.size())
    fail(ErrorCode::Type, "instance has " + std::to_string(instance.size()) + " values for " +
                              std::to_string(attrs.size()) + " attributes");
  std::string line;
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    if (i) line += ',';
    const double v = instance[i];
    if (is_missing(v)) {
      line += '?';
    } else if (attrs[i].space.is_finite()) {
      const double r = std::round(v);
      if (r != v || r < 0 || r >= attrs[i].space.cardinality())
        fail(ErrorCode::Type, "value " + format_double(v) + " is not a state of " + attrs[i].name);
      line += arff_token(attrs[i].space.labels()[static_cast<std::size_t>(r)]);
    } else {
      if (!std::isfinite(v)) fail(ErrorCode::Type, "non-finite value for " + attrs[i].name);
      line += format_double(v);
    }
  }
  out_ << line << '\n';
  if (!out_) fail(ErrorCode::Io, "write failure");
}

void write_arff(std::ostream& out, const ArffHeader& header, std::span<const DataInstance> instances) {
  ArffWriter w(out, header);
  for (const auto& row : instances) w.write(row);
}

void write_dynamic_arff(std::ostream& out, const ArffHeader& header, std::span<const DynamicDataInstance> instances) {
  ArffHeader full;
  full.relation = header.relation;
  full.attributes.push_back(Attribute{0, kSequenceIdName, StateSpace::real(), SpecialAttribute::SequenceId});
  full.attributes.push_back(Attribute{1, kTimeIdName, StateSpace::real(), SpecialAttribute::TimeId});
  for (const auto& a : header.attributes) {
    if (a.special != SpecialAttribute::None) fail(ErrorCode::Schema, "header already carries " + a.name);
    Attribute copy = a;
    copy.index = static_cast<int>(full.attributes.size());
    full.attributes.push_back(std::move(copy));
  }
  ArffWriter w(out, std::move(full));
  std::vector<double> row;
  for (const auto& inst : instances) {
    row.assign({static_cast<double>(inst.sequence_id), static_cast<double>(inst.time_id)});
    row.insert(row.end(), inst.values.begin(), inst.values.end());
    w.write(row);
  }
}

ArffHeader header_for(const BayesianNetwork& bn, std::string relation) {
  ArffHeader h;
  h.relation = std::move(relation);
  for (const auto& v : bn.variables()) h.attributes.push_back(Attribute{v.id, v.name, v.space, SpecialAttribute::None});
  return h;
}

std::vector<int> bind_columns(const BayesianNetwork& bn, const ArffHeader& header) {
  std::vector<int> cols;
  for (const auto& v : bn.variables()) {
    auto c = header.find(v.name);
    if (!c) {
      // Latent variables may be absent from data.
      if (v.role == Role::Latent) {
        cols.push_back(-1);
        continue;
      }
      fail(ErrorCode::Schema, "data has no attribute for variable '" + v.name + "'");
    }
    const auto& attr = header.attributes[static_cast<std::size_t>(*c)];
    if (attr.space != v.space)
      fail(ErrorCode::Schema, "attribute '" + v.name + "' has a different state space than the model variable");
    cols.push_back(*c);
  }
  return cols;
}

Assignment to_assignment(std::span<const double> row, std::span<const int> columns) {
  Assignment a(columns.size());
  for (std::size_t i = 0; i < columns.size(); ++i) {
    const int c = columns[i];
    if (c < 0) continue;
    const double v = row[static_cast<std::size_t>(c)];
    if (!is_missing(v)) a.set(static_cast<VarId>(i), v);
  }
  return a;
}

}  // namespace streambayes
