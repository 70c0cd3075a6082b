#ifndef REPFORGE_DATAIO_HPP
#define REPFORGE_DATAIO_HPP

#include "repforge/core.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace repforge {

// ---------------------------------------------------------------------------
// set identity
// ---------------------------------------------------------------------------

/// `userID_weight_setnum`, e.g. A321_15_9.
struct SetId {
  std::string user_id;
  int weight_kg = 0;
  int set_num = 0;

  std::string str() const {
    return user_id + "_" + std::to_string(weight_kg) + "_" + std::to_string(set_num);
  }

  friend bool operator==(const SetId&, const SetId&) = default;
  friend auto operator<=>(const SetId&, const SetId&) = default;
};

inline SetId parse_set_id(std::string_view text) {
  const auto fields = split(trim(text), '_');
  if (fields.size() != 3) {
    throw ParseError("set id '" + std::string(text) + "': expected 3 underscore-separated fields, got " +
                     std::to_string(fields.size()));
  }
  SetId id;
  id.user_id = trim(fields[0]);
  if (id.user_id.empty()) throw ParseError("set id '" + std::string(text) + "': empty user id");
  const auto weight = parse_int(fields[1]);
  const auto set_num = parse_int(fields[2]);
  if (!weight || !set_num) {
    throw ParseError("set id '" + std::string(text) + "': weight and set number must be integers");
  }
  if (*weight <= 0) throw ParseError("set id '" + std::string(text) + "': weight must be positive");
  if (*set_num < 1) throw ParseError("set id '" + std::string(text) + "': set number must be >= 1");
  id.weight_kg = static_cast<int>(*weight);
  id.set_num = static_cast<int>(*set_num);
  return id;
}

inline std::string format_set_id(const SetId& id) { return id.str(); }

/// Globally unique rep id: set text form + "_" + 1-based ordinal.
inline std::string make_rep_id(const SetId& set, std::size_t ordinal) {
  return set.str() + "_" + std::to_string(ordinal);
}

// ---------------------------------------------------------------------------
// raw recordings
// ---------------------------------------------------------------------------

struct ScalarSeries {
  std::vector<double> t;
  std::vector<double> value;

  std::size_t size() const { return value.size(); }
};

struct AxisSeries {
  std::vector<double> t;
  std::array<std::vector<double>, 3> axis;

  std::size_t size() const { return t.size(); }
};

/// Which accelerometer axis points outward from the palm, and its sign.
struct PalmAxisConfig {
  int axis_index = 0;
  int sign = 1;

  void validate() const {
    require(axis_index >= 0 && axis_index <= 2, "palm axis index must be 0, 1 or 2");
    require(sign == 1 || sign == -1, "palm axis sign must be +1 or -1");
  }
};

inline constexpr double kNominalEmgHz = 2148.1;
inline constexpr double kNominalImuHz = 370.4;
inline constexpr int kMinRpe = 1;
inline constexpr int kMaxRpe = 10;

/// One recorded exercise set. EMG in mV, accel in g, gyro in deg/s; gyro
/// shares the accel timestamps.
struct RawSet {
  SetId id;
  ScalarSeries emg;
  AxisSeries accel;
  AxisSeries gyro;
  std::vector<int> rpe;
};

inline void check_increasing(const std::vector<double>& t, const std::string& what) {
  require(!t.empty(), what + ": empty series");
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (!(t[i] > t[i - 1])) {
      throw ValidationError(what + ": timestamps not strictly increasing at sample " + std::to_string(i));
    }
  }
}

inline void check_rpe(int v, const std::string& where) {
  if (v < kMinRpe || v > kMaxRpe) {
    throw ValidationError(where + ": RPE " + std::to_string(v) + " outside [1, 10]");
  }
}

inline void validate(const RawSet& s) {
  const std::string name = s.id.str();
  check_increasing(s.emg.t, name + " emg");
  require(s.emg.value.size() == s.emg.t.size(), name + ": emg length mismatch");
  check_increasing(s.accel.t, name + " imu");
  require(s.gyro.t == s.accel.t, name + ": gyro must share accel timestamps");
  for (int a = 0; a < 3; ++a) {
    require(s.accel.axis[a].size() == s.accel.t.size(), name + ": accel length mismatch");
    require(s.gyro.axis[a].size() == s.gyro.t.size(), name + ": gyro length mismatch");
  }
  require(!s.rpe.empty(), name + ": no RPE annotations");
  for (int v : s.rpe) check_rpe(v, name);
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> comments;  // '#' lines, without the marker
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name, or -1.
  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  }
};

inline CsvTable parse_csv(std::string_view text, const std::string& origin) {
  CsvTable table;
  bool have_header = false;
  for (auto line : split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    if (stripped[0] == '#') {
      table.comments.push_back(trim(std::string_view(stripped).substr(1)));
      continue;
    }
    auto cells = split(line, ',');
    for (auto& c : cells) c = trim(c);
    if (!have_header) {
      table.header = std::move(cells);
      have_header = true;
    } else {
      table.rows.push_back(std::move(cells));
    }
  }
  if (!have_header) throw ParseError(origin + ": missing header row");
  return table;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline CsvTable read_csv(const std::string& path) { return parse_csv(read_text_file(path), path); }

/// Writes via a temporary sibling and rename, so readers never see a partial file.
inline void write_text_file_atomic(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << contents;
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

// ---------------------------------------------------------------------------
// column map
// ---------------------------------------------------------------------------

/// Maps logical channels onto source CSV columns. An empty or missing time
/// column means timestamps are synthesized from the nominal rate.
struct ColumnMap {
  std::string emg_time = "t_s";
  std::string emg = "emg_mv";
  std::string imu_time = "t_s";
  std::array<std::string, 3> accel{"ax_g", "ay_g", "az_g"};
  std::array<std::string, 3> gyro{"gx_dps", "gy_dps", "gz_dps"};
  double emg_rate_hz = kNominalEmgHz;
  double imu_rate_hz = kNominalImuHz;
  PalmAxisConfig palm;

  static ColumnMap from_config(const Config& cfg) {
    ColumnMap m;
    m.emg_time = cfg.get("columns.emg_time", m.emg_time);
    m.emg = cfg.get("columns.emg", m.emg);
    m.imu_time = cfg.get("columns.imu_time", m.imu_time);
    const char* names[3] = {"x", "y", "z"};
    for (int a = 0; a < 3; ++a) {
      m.accel[a] = cfg.get(std::string("columns.a") + names[a], m.accel[a]);
      m.gyro[a] = cfg.get(std::string("columns.g") + names[a], m.gyro[a]);
    }
    m.emg_rate_hz = cfg.get_double("rate.emg_hz", m.emg_rate_hz);
    m.imu_rate_hz = cfg.get_double("rate.imu_hz", m.imu_rate_hz);
    m.palm.axis_index = static_cast<int>(cfg.get_int("palm.axis", m.palm.axis_index));
    m.palm.sign = static_cast<int>(cfg.get_int("palm.sign", m.palm.sign));
    require(m.emg_rate_hz > 0 && m.imu_rate_hz > 0, "nominal rates must be positive");
    m.palm.validate();
    return m;
  }
};

namespace detail {

inline std::vector<double> numeric_column(const CsvTable& table, int col, const std::string& origin,
                                          const std::string& name) {
  std::vector<double> out;
  out.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (static_cast<std::size_t>(col) >= row.size()) {
      throw ParseError(origin + ": row " + std::to_string(r + 1) + " lacks column '" + name + "'");
    }
    auto v = parse_double(row[static_cast<std::size_t>(col)]);
    if (!v || !std::isfinite(*v)) {
      throw ParseError(origin + ": row " + std::to_string(r + 1) + " column '" + name + "' is not a finite number");
    }
    out.push_back(*v);
  }
  return out;
}

inline std::vector<double> required_column(const CsvTable& table, const std::string& name,
                                           const std::string& origin) {
  const int col = table.column(name);
  if (col < 0) throw ParseError(origin + ": missing column '" + name + "'");
  return numeric_column(table, col, origin, name);
}

inline std::vector<double> time_column(const CsvTable& table, const std::string& name, double rate_hz,
                                       const std::string& origin) {
  const int col = name.empty() || name == "none" ? -1 : table.column(name);
  if (col >= 0) return numeric_column(table, col, origin, name);
  std::vector<double> t(table.rows.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i) / rate_hz;
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// RPE table
// ---------------------------------------------------------------------------

/// `set_id, rpe_1, rpe_2, ...`; rows may be ragged and end in blank cells.
inline std::map<std::string, std::vector<int>> read_rpe_table(const std::string& path) {
  const CsvTable table = read_csv(path);
  if (table.header.empty() || table.header[0] != "set_id") {
    throw ParseError(path + ": first column must be 'set_id'");
  }
  std::map<std::string, std::vector<int>> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = path + ": row " + std::to_string(r + 1);
    const std::string key = parse_set_id(row.at(0)).str();
    std::size_t last = row.size();
    while (last > 1 && row[last - 1].empty()) --last;
    std::vector<int> values;
    for (std::size_t c = 1; c < last; ++c) {
      auto v = parse_int(row[c]);
      if (!v) throw ParseError(where + ": RPE '" + row[c] + "' is not an integer");
      check_rpe(static_cast<int>(*v), where);
      values.push_back(static_cast<int>(*v));
    }
    if (!out.emplace(key, std::move(values)).second) {
      throw ParseError(where + ": duplicate set id " + key);
    }
  }
  return out;
}

/// `comment`, when given, is written as a leading `#` line.
inline std::string comment_line(const std::string& comment) { return comment.empty() ? "" : "# " + comment + "\n"; }

inline void write_rpe_table(const std::string& path, const std::vector<std::pair<SetId, std::vector<int>>>& rows,
                            const std::string& comment = "") {
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.second.size());
  std::string out = comment_line(comment) + "set_id";
  for (std::size_t i = 1; i <= width; ++i) out += ",rpe_" + std::to_string(i);
  out += "\n";
  for (const auto& [id, values] : rows) {
    out += id.str();
    for (std::size_t i = 0; i < width; ++i) {
      out += ",";
      if (i < values.size()) out += std::to_string(values[i]);
    }
    out += "\n";
  }
  write_text_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// loading
// ---------------------------------------------------------------------------

inline RawSet load_set(const std::string& emg_path, const std::string& imu_path,
                       const std::map<std::string, std::vector<int>>& rpe_table, const SetId& set_id,
                       const ColumnMap& columns = {}) {
  RawSet s;
  s.id = set_id;
  auto annot = rpe_table.find(set_id.str());
  if (annot == rpe_table.end()) {
    throw ValidationError("set " + set_id.str() + " is not annotated in the RPE table");
  }
  s.rpe = annot->second;

  const CsvTable emg = read_csv(emg_path);
  s.emg.value = detail::required_column(emg, columns.emg, emg_path);
  s.emg.t = detail::time_column(emg, columns.emg_time, columns.emg_rate_hz, emg_path);

  const CsvTable imu = read_csv(imu_path);
  s.accel.t = detail::time_column(imu, columns.imu_time, columns.imu_rate_hz, imu_path);
  s.gyro.t = s.accel.t;
  for (int a = 0; a < 3; ++a) {
    s.accel.axis[a] = detail::required_column(imu, columns.accel[a], imu_path);
    s.gyro.axis[a] = detail::required_column(imu, columns.gyro[a], imu_path);
  }
  validate(s);
  return s;
}

inline RawSet load_set(const std::string& emg_path, const std::string& imu_path, const std::string& rpe_table_path,
                       const SetId& set_id, const ColumnMap& columns = {}) {
  return load_set(emg_path, imu_path, read_rpe_table(rpe_table_path), set_id, columns);
}

/// Writes the EMG and IMU CSVs of a set with explicit timestamps.
inline void write_set_csv(const RawSet& s, const std::string& emg_path, const std::string& imu_path,
                          const std::string& comment = "") {
  std::string emg = comment_line(comment) + "t_s,emg_mv\n";
  for (std::size_t i = 0; i < s.emg.size(); ++i) {
    emg += format_double(s.emg.t[i]) + "," + format_double(s.emg.value[i]) + "\n";
  }
  write_text_file_atomic(emg_path, emg);
  std::string imu = comment_line(comment) + "t_s,ax_g,ay_g,az_g,gx_dps,gy_dps,gz_dps\n";
  for (std::size_t i = 0; i < s.accel.size(); ++i) {
    imu += format_double(s.accel.t[i]);
    for (int a = 0; a < 3; ++a) imu += "," + format_double(s.accel.axis[a][i]);
    for (int a = 0; a < 3; ++a) imu += "," + format_double(s.gyro.axis[a][i]);
    imu += "\n";
  }
  write_text_file_atomic(imu_path, imu);
}

/// Where a corpus lives on disk. File patterns substitute `{set}` with the
/// set id text.
struct DataLayout {
  std::string dir = ".";
  std::string emg_pattern = "{set}_emg.csv";
  std::string imu_pattern = "{set}_imu.csv";
  std::string rpe_table = "rpe.csv";

  static DataLayout from_config(const Config& cfg) {
    DataLayout d;
    d.dir = cfg.get("data.dir", d.dir);
    d.emg_pattern = cfg.get("data.emg_file", d.emg_pattern);
    d.imu_pattern = cfg.get("data.imu_file", d.imu_pattern);
    d.rpe_table = cfg.get("data.rpe_table", d.rpe_table);
    return d;
  }

  std::string path_for(const std::string& pattern, const SetId& id) const {
    std::string name = pattern;
    const std::string key = "{set}";
    for (auto pos = name.find(key); pos != std::string::npos; pos = name.find(key)) {
      name.replace(pos, key.size(), id.str());
    }
    return (std::filesystem::path(dir) / name).string();
  }

  std::string emg_path(const SetId& id) const { return path_for(emg_pattern, id); }
  std::string imu_path(const SetId& id) const { return path_for(imu_pattern, id); }
  std::string rpe_path() const { return (std::filesystem::path(dir) / rpe_table).string(); }
};

/// Loads every set named in the RPE table, in table (sorted id) order.
inline std::vector<RawSet> load_corpus(const DataLayout& layout, const ColumnMap& columns) {
  const auto table = read_rpe_table(layout.rpe_path());
  std::vector<RawSet> sets;
  for (const auto& [key, _] : table) {
    const SetId id = parse_set_id(key);
    sets.push_back(load_set(layout.emg_path(id), layout.imu_path(id), table, id, columns));
  }
  return sets;
}

// ---------------------------------------------------------------------------
// rep-wise dataset
// ---------------------------------------------------------------------------

struct RepRow {
  std::string rep_id;
  std::string set_id;
  std::size_t rep_index = 0;  // 1-based within the set
  std::size_t start_idx = 0;
  std::size_t mid_idx = 0;
  std::size_t end_idx = 0;
  int rpe = 0;
  std::vector<double> imu;
  std::vector<double> emg;
};

struct RepTable {
  std::string schema_version;
  std::vector<std::string> imu_names;
  std::vector<std::string> emg_names;
  std::vector<RepRow> rows;
  std::vector<std::string> comments;  // extra provenance lines (config hash, seed)
};

inline std::string format_rep_table(const RepTable& t) {
  for (const auto& r : t.rows) {
    if (r.imu.size() != t.imu_names.size() || r.emg.size() != t.emg_names.size()) {
      throw ValidationError("rep " + r.rep_id + " does not match the feature schema " + t.schema_version);
    }
  }
  std::string out;
  for (const auto& c : t.comments) out += "# " + c + "\n";
  out += "# schema_version=" + t.schema_version + "\n";
  out += "rep_id,set_id,rep_index,start_idx,mid_idx,end_idx,rpe";
  for (const auto& n : t.imu_names) out += "," + n;
  for (const auto& n : t.emg_names) out += "," + n;
  out += "\n";
  for (const auto& r : t.rows) {
    out += r.rep_id + "," + r.set_id + "," + std::to_string(r.rep_index) + "," + std::to_string(r.start_idx) + "," +
           std::to_string(r.mid_idx) + "," + std::to_string(r.end_idx) + "," + std::to_string(r.rpe);
    for (double v : r.imu) out += "," + format_double(v);
    for (double v : r.emg) out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

inline void write_rep_dataset(const RepTable& table, const std::string& path) {
  write_text_file_atomic(path, format_rep_table(table));
}

/// Reads a file produced by write_rep_dataset. Feature columns are split into
/// IMU and EMG blocks by the `emg_` name prefix.
inline RepTable read_rep_dataset(const std::string& path) {
  const CsvTable csv = read_csv(path);
  RepTable t;
  for (const auto& c : csv.comments) {
    if (c.rfind("schema_version=", 0) == 0) {
      t.schema_version = c.substr(15);
    } else {
      t.comments.push_back(c);
    }
  }
  static const std::vector<std::string> fixed = {"rep_id",  "set_id",  "rep_index", "start_idx",
                                                 "mid_idx", "end_idx", "rpe"};
  if (csv.header.size() < fixed.size() ||
      !std::equal(fixed.begin(), fixed.end(), csv.header.begin())) {
    throw ParseError(path + ": not a rep dataset (unexpected leading columns)");
  }
  std::vector<bool> is_emg;
  for (std::size_t c = fixed.size(); c < csv.header.size(); ++c) {
    const bool emg = csv.header[c].rfind("emg_", 0) == 0;
    is_emg.push_back(emg);
    (emg ? t.emg_names : t.imu_names).push_back(csv.header[c]);
  }
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& cells = csv.rows[r];
    if (cells.size() != csv.header.size()) {
      throw ParseError(path + ": row " + std::to_string(r + 1) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(csv.header.size()));
    }
    RepRow row;
    row.rep_id = cells[0];
    row.set_id = cells[1];
    auto as_index = [&](std::size_t c) {
      auto v = parse_int(cells[c]);
      if (!v || *v < 0) throw ParseError(path + ": row " + std::to_string(r + 1) + " bad index");
      return static_cast<std::size_t>(*v);
    };
    row.rep_index = as_index(2);
    row.start_idx = as_index(3);
    row.mid_idx = as_index(4);
    row.end_idx = as_index(5);
    row.rpe = static_cast<int>(as_index(6));
    check_rpe(row.rpe, path);
    for (std::size_t c = fixed.size(); c < cells.size(); ++c) {
      auto v = parse_double(cells[c]);
      if (!v) throw ParseError(path + ": row " + std::to_string(r + 1) + " column " + csv.header[c] + " not numeric");
      (is_emg[c - fixed.size()] ? row.emg : row.imu).push_back(*v);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace repforge

#endif  // REPFORGE_DATAIO_HPP
