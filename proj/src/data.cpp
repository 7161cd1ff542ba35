#include "icjm/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace icjm {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

double parse_time_field(const std::string& raw, int row, bool inf_ok) {
  const std::string s = trim(raw);
  if (s.empty() || lower(s) == "inf" || lower(s) == "+inf" || lower(s) == "infinity") {
    if (!inf_ok)
      throw std::runtime_error("row " + std::to_string(row) + ": non-finite value not allowed here");
    return kInf;
  }
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("row " + std::to_string(row) + ": cannot parse number '" + s + "'");
  }
}

struct RawRow {
  int file_row;
  double start, end;
  int status;
  Vec z, x, w;
};

}  // namespace

std::string to_string(CensoringStatus s) {
  switch (s) {
    case CensoringStatus::Exact: return "exact";
    case CensoringStatus::Left: return "left";
    case CensoringStatus::Right: return "right";
    case CensoringStatus::Interval: return "interval";
  }
  return "?";
}

CensoringStatus classify_interval(double t_left, double t_right) {
  if (std::isinf(t_right)) return CensoringStatus::Right;
  if (t_left == t_right) return CensoringStatus::Exact;
  if (t_left == 0.0) return CensoringStatus::Left;
  return CensoringStatus::Interval;
}

int Dataset::n0() const {
  int k = 0;
  for (const auto& s : subjects)
    if (s.status != CensoringStatus::Right) ++k;
  return k;
}

int Dataset::total_obs() const {
  int k = 0;
  for (const auto& s : subjects) k += static_cast<int>(s.longitudinal.size());
  return k;
}

std::uint64_t Dataset::digest() const {
  // FNV-1a over a canonical byte stream; used for provenance stamps
  std::uint64_t h = 1469598103934665603ULL;
  auto eat = [&h](const void* ptr, size_t len) {
    const auto* b = static_cast<const unsigned char*>(ptr);
    for (size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  auto eat_d = [&](double v) { eat(&v, sizeof(v)); };
  eat(&p, sizeof(p));
  eat(&q, sizeof(q));
  eat(&pz, sizeof(pz));
  for (const auto& s : subjects) {
    eat(s.id.data(), s.id.size());
    eat_d(s.t_left);
    eat_d(std::isinf(s.t_right) ? -1.0 : s.t_right);
    for (int j = 0; j < s.x.size(); ++j) eat_d(s.x[j]);
    for (int j = 0; j < s.long_fixed.size(); ++j) eat_d(s.long_fixed[j]);
    for (const auto& r : s.longitudinal) {
      eat_d(r.time);
      for (int j = 0; j < r.values.size(); ++j) eat_d(r.values[j]);
    }
  }
  return h;
}

Dataset parse_long_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_long_csv_text(ss.str(), schema);
}

Dataset parse_long_csv_text(const std::string& text, const CsvSchema& schema) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty csv");
  const auto header = split_csv_line(line);
  std::map<std::string, int> col;
  for (size_t j = 0; j < header.size(); ++j) col[lower(header[j])] = static_cast<int>(j);

  auto need = [&](const std::string& name) {
    auto it = col.find(lower(name));
    if (it == col.end()) throw std::runtime_error("missing column '" + name + "'");
    return it->second;
  };
  const int c_id = need(schema.id), c_start = need(schema.start);
  const int c_end = need(schema.end), c_status = need(schema.status);

  auto collect = [&](const std::vector<std::string>& explicit_names, char prefix) {
    std::vector<int> idx;
    if (!explicit_names.empty()) {
      for (const auto& nm : explicit_names) idx.push_back(need(nm));
      return idx;
    }
    // auto-detect prefix + number, in numeric order
    std::vector<std::pair<int, int>> found;
    for (const auto& [nm, j] : col) {
      if (nm.size() >= 2 && nm[0] == prefix &&
          std::all_of(nm.begin() + 1, nm.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
        found.emplace_back(std::stoi(nm.substr(1)), j);
    }
    std::sort(found.begin(), found.end());
    for (auto& [num, j] : found) idx.push_back(j);
    return idx;
  };
  const auto zc = collect(schema.z_cols, 'z');
  const auto xc = collect(schema.x_cols, 'x');
  const auto wc = collect(schema.w_cols, 'w');

  std::map<std::string, std::vector<RawRow>> by_id;
  std::vector<std::string> id_order;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    auto field = [&](int j) -> const std::string& {
      if (j >= static_cast<int>(f.size()))
        throw std::runtime_error("row " + std::to_string(row) + ": too few fields");
      return f[j];
    };
    RawRow r;
    r.file_row = row;
    r.start = parse_time_field(field(c_start), row, false);
    r.end = parse_time_field(field(c_end), row, true);
    const std::string st = trim(field(c_status));
    if (st == "0") r.status = 0;
    else if (st == "1") r.status = 1;
    else throw std::runtime_error("row " + std::to_string(row) + ": unknown status code '" + st + "'");
    if (r.end < r.start)
      throw std::runtime_error("row " + std::to_string(row) + ": end < start");
    r.z.resize(zc.size());
    for (size_t j = 0; j < zc.size(); ++j) r.z[j] = parse_time_field(field(zc[j]), row, false);
    r.x.resize(xc.size());
    for (size_t j = 0; j < xc.size(); ++j) r.x[j] = parse_time_field(field(xc[j]), row, false);
    r.w.resize(wc.size());
    for (size_t j = 0; j < wc.size(); ++j) r.w[j] = parse_time_field(field(wc[j]), row, false);
    const std::string id = field(c_id);
    if (by_id.find(id) == by_id.end()) id_order.push_back(id);
    by_id[id].push_back(std::move(r));
  }

  Dataset ds;
  ds.q = static_cast<int>(zc.size());
  ds.p = static_cast<int>(xc.size());
  ds.pz = static_cast<int>(wc.size());
  std::vector<std::string> bad_ids;
  for (const auto& id : id_order) {
    const auto& rows = by_id[id];
    Subject s;
    s.id = id;
    s.x = rows.front().x;
    s.long_fixed = rows.front().w;
    double prev = -kInf;
    bool monotone = true;
    const RawRow& last = rows.back();
    for (size_t k = 0; k < rows.size(); ++k) {
      const RawRow& r = rows[k];
      const bool terminal = (k + 1 == rows.size());
      if (terminal && r.status == 1) break;  // interval rows carry no observation
      if (r.start <= prev) monotone = false;
      prev = r.start;
      LongRecord rec;
      rec.time = r.start;
      rec.values = r.z;
      s.longitudinal.push_back(std::move(rec));
    }
    if (!monotone) bad_ids.push_back(id);
    if (last.status == 1) {
      s.t_left = last.start;
      s.t_right = last.end;
    } else if (std::isinf(last.end)) {
      s.t_left = last.start;
      s.t_right = kInf;
    } else {
      s.t_left = last.end;
      s.t_right = kInf;
    }
    s.status = classify_interval(s.t_left, s.t_right);
    ds.subjects.push_back(std::move(s));
  }
  if (!bad_ids.empty()) {
    std::string msg = "non-monotone observation times for ids:";
    for (const auto& id : bad_ids) msg += " " + id;
    throw std::runtime_error(msg);
  }
  return ds;
}

std::string write_long_csv_text(const Dataset& ds) {
  std::ostringstream out;
  out << "id,start,end,status";
  for (int j = 1; j <= ds.q; ++j) out << ",z" << j;
  for (int j = 1; j <= ds.p; ++j) out << ",x" << j;
  for (int j = 1; j <= ds.pz; ++j) out << ",w" << j;
  out << "\n";
  char buf[40];
  auto num = [&](double v) -> std::string {
    if (std::isinf(v)) return "inf";
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  };
  for (const auto& s : ds.subjects) {
    auto tail = [&](const Vec& z) {
      std::string t;
      for (int j = 0; j < z.size(); ++j) t += "," + num(z[j]);
      for (int j = 0; j < s.x.size(); ++j) t += "," + num(s.x[j]);
      for (int j = 0; j < s.long_fixed.size(); ++j) t += "," + num(s.long_fixed[j]);
      return t;
    };
    const Vec zero = Vec::Zero(ds.q);
    for (size_t k = 0; k < s.longitudinal.size(); ++k) {
      const auto& rec = s.longitudinal[k];
      const double end = (k + 1 < s.longitudinal.size()) ? s.longitudinal[k + 1].time : s.t_left;
      out << s.id << "," << num(rec.time) << "," << num(end) << ",0" << tail(rec.values) << "\n";
    }
    out << s.id << "," << num(s.t_left) << "," << num(s.t_right) << ",1" << tail(zero) << "\n";
  }
  return out.str();
}

void write_long_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << write_long_csv_text(ds);
}

ValidationReport validate(const Dataset& ds) {
  ValidationReport rep;
  auto add = [&rep](const std::string& m) { rep.findings.push_back(m); };
  for (const auto& s : ds.subjects) {
    if (s.x.size() != ds.p) add("subject " + s.id + ": x dimension mismatch");
    if (s.long_fixed.size() != ds.pz) add("subject " + s.id + ": w dimension mismatch");
    if (s.t_left < 0) add("subject " + s.id + ": negative interval endpoint");
    if (s.t_left > s.t_right) add("subject " + s.id + ": t_left > t_right");
    if (s.status != classify_interval(s.t_left, s.t_right))
      add("subject " + s.id + ": status inconsistent with endpoints");
    if (s.status != CensoringStatus::Right && std::isinf(s.t_right))
      add("subject " + s.id + ": non-right status with infinite t_right");
    double prev = -1.0;
    const double t_max = s.obs_time();
    for (const auto& r : s.longitudinal) {
      if (r.values.size() != ds.q) {
        add("subject " + s.id + ": longitudinal value dimension mismatch");
        break;
      }
      if (r.time < 0) add("subject " + s.id + ": negative observation time");
      if (r.time <= prev) {
        add("subject " + s.id + ": observation times not strictly increasing");
        break;
      }
      prev = r.time;
      if (r.time > t_max * (1.0 + 1e-12) + 1e-12)
        add("subject " + s.id + ": observation time beyond event interval");
    }
  }
  return rep;
}

Dataset midpoint_impute(const Dataset& ds) {
  Dataset out = ds;
  for (auto& s : out.subjects) {
    double t;
    switch (s.status) {
      case CensoringStatus::Interval: t = 0.5 * (s.t_left + s.t_right); break;
      case CensoringStatus::Left: t = 0.5 * s.t_right; break;
      default: continue;
    }
    s.t_left = s.t_right = t;
    s.status = CensoringStatus::Exact;
    while (!s.longitudinal.empty() && s.longitudinal.back().time > t)
      s.longitudinal.pop_back();
  }
  return out;
}

}  // namespace icjm
