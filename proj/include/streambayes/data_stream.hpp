#pragma once

#include <algorithm>
#include <cstddef>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "streambayes/core_model.hpp"

namespace streambayes {

enum class SpecialAttribute { None, SequenceId, TimeId };

inline constexpr const char* kSequenceIdName = "SEQUENCE_ID";
inline constexpr const char* kTimeIdName = "TIME_ID";

struct Attribute {
  int index = 0;
  std::string name;
  StateSpace space = StateSpace::real();
  SpecialAttribute special = SpecialAttribute::None;

  friend bool operator==(const Attribute&, const Attribute&) = default;
};

struct ArffHeader {
  std::string relation;
  std::vector<Attribute> attributes;

  [[nodiscard]] std::optional<int> find(std::string_view name) const;
  friend bool operator==(const ArffHeader&, const ArffHeader&) = default;
};

/// One value per attribute: real values as-is, finite values as 0-based state indices, Missing as NaN.
using DataInstance = std::vector<double>;

struct DynamicDataInstance {
  long sequence_id = 0;
  long time_id = 0;
  DataInstance values;

  friend bool operator==(const DynamicDataInstance& a, const DynamicDataInstance& b);
};

/// Lazy ARFF reader: the header is parsed on construction, rows one at a time on demand.
class ArffReader {
 public:
  /// `name` labels error messages.
  ArffReader(std::unique_ptr<std::istream> in, std::string name);
  /// "-" reads standard input.
  static ArffReader open(const std::string& path);
  static ArffReader from_string(std::string text);

  [[nodiscard]] const ArffHeader& header() const noexcept { return header_; }
  /// Next row or nullopt at end of stream; throws Parse with the line number.
  std::optional<DataInstance> next();
  [[nodiscard]] std::size_t line() const noexcept { return line_; }

 private:
  bool read_line(std::string& out);
  void parse_header();

  std::unique_ptr<std::istream> in_;
  std::string name_;
  std::size_t line_ = 0;
  ArffHeader header_;
  std::string buffer_;
  std::vector<std::string_view> cells_;
};

/// Dynamic stream: SEQUENCE_ID and TIME_ID are stripped into the instance fields. `header()` lists
/// only the remaining attributes (re-indexed from 0).
class DynamicArffReader {
 public:
  explicit DynamicArffReader(ArffReader reader);
  static DynamicArffReader open(const std::string& path) { return DynamicArffReader(ArffReader::open(path)); }
  static DynamicArffReader from_string(std::string text) { return DynamicArffReader(ArffReader::from_string(std::move(text))); }

  [[nodiscard]] const ArffHeader& header() const noexcept { return header_; }
  /// Throws Order when a sequence's time ids fail to increase.
  std::optional<DynamicDataInstance> next();

 private:
  ArffReader reader_;
  ArffHeader header_;
  int seq_col_ = -1;
  int time_col_ = -1;
  std::vector<int> keep_;
  std::map<long, long> last_time_;
};

template <class Instance>
struct Batch {
  long batch_index = 0;
  std::vector<Instance> instances;
};

/// Groups a reader's rows into batches of at most `batch_size`, holding one batch at a time.
template <class Reader>
class BatchStream {
 public:
  using Instance = typename decltype(std::declval<Reader&>().next())::value_type;

  BatchStream(Reader& reader, std::size_t batch_size);
  std::optional<Batch<Instance>> next() {
    Batch<Instance> b;
    b.batch_index = index_;
    while (b.instances.size() < size_) {
      auto row = reader_.next();
      if (!row) break;
      b.instances.push_back(std::move(*row));
    }
    if (b.instances.empty()) return std::nullopt;
    ++index_;
    return b;
  }

 private:
  Reader& reader_;
  std::size_t size_;
  long index_ = 0;
};

/// Throws Config for batch_size 0.
void require_batch_size(std::size_t batch_size);

template <class Reader>
BatchStream<Reader>::BatchStream(Reader& reader, std::size_t batch_size) : reader_(reader), size_(batch_size) {
  require_batch_size(batch_size);
}

/// Splits an in-memory sequence into consecutive batches.
template <class Instance>
std::vector<Batch<Instance>> batches(const std::vector<Instance>& instances, std::size_t batch_size) {
  require_batch_size(batch_size);
  std::vector<Batch<Instance>> out;
  for (std::size_t i = 0; i < instances.size(); i += batch_size) {
    Batch<Instance> b;
    b.batch_index = static_cast<long>(out.size());
    const auto end = std::min(instances.size(), i + batch_size);
    b.instances.assign(instances.begin() + static_cast<std::ptrdiff_t>(i), instances.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back(std::move(b));
  }
  return out;
}

/// Streaming writer; reals use the shortest representation that reads back bit-exactly.
class ArffWriter {
 public:
  ArffWriter(std::ostream& out, ArffHeader header);
  /// Throws Type when the instance does not conform to the header.
  void write(std::span<const double> instance);

 private:
  std::ostream& out_;
  ArffHeader header_;
};

void write_arff(std::ostream& out, const ArffHeader& header, std::span<const DataInstance> instances);
/// `header` lists the non-special attributes; SEQUENCE_ID and TIME_ID are emitted as leading columns.
void write_dynamic_arff(std::ostream& out, const ArffHeader& header, std::span<const DynamicDataInstance> instances);

/// Header with one attribute per network variable, in id order.
ArffHeader header_for(const BayesianNetwork& bn, std::string relation);

/// Column of each network variable in `header`, matched by name; throws Schema when a variable is
/// absent or its state space differs. Latent variables may be absent (-1).
std::vector<int> bind_columns(const BayesianNetwork& bn, const ArffHeader& header);

/// Reorders a row into network-id order using `columns` from bind_columns.
Assignment to_assignment(std::span<const double> row, std::span<const int> columns);

}  // namespace streambayes
