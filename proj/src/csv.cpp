#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "crteffects/errors.hpp"
#include "crteffects/harness.hpp"

namespace crt {
namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_double(const std::string& s, int line, const std::string& col) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line) + ": bad numeric value '" +
                    s + "' in column " + col);
  }
}

long long parse_int(const std::string& s, int line, const std::string& col) {
  try {
    size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line) + ": bad integer '" + s +
                    "' in column " + col);
  }
}

}  // namespace

void write_trial_csv(const TrialData& trial, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "cluster_id,pair_id,arm,y";
  for (const auto& n : trial.e_names) out << ',' << n;
  for (const auto& n : trial.w_names) out << ',' << n;
  out << '\n';
  for (const auto& c : trial.clusters) {
    for (int i = 0; i < c.size(); ++i) {
      out << c.id << ',' << c.pair_id.value_or(0) << ',' << c.arm << ','
          << fmt(c.y[i]);
      for (int k = 0; k < c.e.size(); ++k) out << ',' << fmt(c.e[k]);
      for (int k = 0; k < c.w.cols(); ++k) out << ',' << fmt(c.w(i, k));
      out << '\n';
    }
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

TrialData read_trial_csv(const std::string& path,
                         const std::vector<std::string>& cluster_covariates) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
  const std::vector<std::string> header = split_line(line);
  const std::vector<std::string> fixed = {"cluster_id", "pair_id", "arm", "y"};
  if (header.size() < fixed.size())
    throw DataError("line 1: expected header cluster_id,pair_id,arm,y,...");
  for (size_t k = 0; k < fixed.size(); ++k)
    if (header[k] != fixed[k])
      throw DataError("line 1: expected column " + std::to_string(k + 1) +
                      " to be '" + fixed[k] + "', found '" + header[k] + "'");
  const std::vector<std::string> covs(header.begin() + 4, header.end());
  {
    std::set<std::string> seen;
    for (const auto& n : covs)
      if (n.empty() || !seen.insert(n).second)
        throw DataError("line 1: duplicate or empty covariate column '" + n +
                        "'");
  }
  const int ncov = static_cast<int>(covs.size());

  struct Raw {
    long long pair = 0;
    int arm = 0;
    int first_line = 0;
    std::vector<double> y;
    std::vector<std::vector<double>> x;  // per covariate column
  };
  std::vector<long long> order;
  std::map<long long, Raw> by_id;
  int ln = 1;
  while (std::getline(in, line)) {
    ++ln;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::vector<std::string> f = split_line(line);
    if (static_cast<int>(f.size()) != 4 + ncov)
      throw DataError("line " + std::to_string(ln) + ": expected " +
                      std::to_string(4 + ncov) + " fields, found " +
                      std::to_string(f.size()));
    const long long id = parse_int(f[0], ln, "cluster_id");
    const long long pair = parse_int(f[1], ln, "pair_id");
    const long long arm = parse_int(f[2], ln, "arm");
    if (arm != 0 && arm != 1)
      throw DataError("line " + std::to_string(ln) + ": arm must be 0 or 1");
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      order.push_back(id);
      Raw r;
      r.pair = pair;
      r.arm = static_cast<int>(arm);
      r.first_line = ln;
      r.x.resize(ncov);
      it = by_id.emplace(id, std::move(r)).first;
    } else {
      if (it->second.arm != arm)
        throw DataError("line " + std::to_string(ln) + ": cluster " +
                        std::to_string(id) + " appears in both arms");
      if (it->second.pair != pair)
        throw DataError("line " + std::to_string(ln) + ": cluster " +
                        std::to_string(id) + " has inconsistent pair_id");
    }
    it->second.y.push_back(parse_double(f[3], ln, "y"));
    for (int k = 0; k < ncov; ++k)
      it->second.x[k].push_back(parse_double(f[4 + k], ln, covs[k]));
  }
  if (order.empty()) throw DataError("'" + path + "' has no data rows");

  // Which covariate columns are cluster-level?
  std::vector<bool> is_cluster(ncov, false);
  if (!cluster_covariates.empty()) {
    for (const auto& n : cluster_covariates) {
      bool found = false;
      for (int k = 0; k < ncov; ++k)
        if (covs[k] == n) {
          is_cluster[k] = true;
          found = true;
        }
      if (!found)
        throw ConfigError("cluster covariate '" + n +
                          "' is not a column of '" + path + "'");
    }
    for (int k = 0; k < ncov; ++k) {
      if (!is_cluster[k]) continue;
      for (const long long id : order) {
        const auto& col = by_id[id].x[k];
        for (const double v : col)
          if (v != col.front())
            throw DataError("cluster covariate '" + covs[k] +
                            "' varies within cluster " + std::to_string(id));
      }
    }
  } else {
    for (int k = 0; k < ncov; ++k) {
      bool constant = true;
      for (const long long id : order) {
        const auto& col = by_id[id].x[k];
        for (const double v : col)
          if (v != col.front()) {
            constant = false;
            break;
          }
        if (!constant) break;
      }
      is_cluster[k] = constant;
    }
  }

  TrialData t;
  for (int k = 0; k < ncov; ++k)
    (is_cluster[k] ? t.e_names : t.w_names).push_back(covs[k]);
  for (const long long id : order) {
    const Raw& r = by_id[id];
    const int n = static_cast<int>(r.y.size());
    ClusterRecord c;
    c.id = static_cast<int>(id);
    if (r.pair != 0) c.pair_id = static_cast<int>(r.pair);
    c.arm = r.arm;
    c.y = Eigen::Map<const Eigen::VectorXd>(r.y.data(), n);
    c.e.resize(t.e_names.size());
    c.w.resize(n, t.w_names.size());
    int ie = 0, iw = 0;
    for (int k = 0; k < ncov; ++k) {
      if (is_cluster[k]) {
        c.e[ie++] = r.x[k].front();
      } else {
        c.w.col(iw++) = Eigen::Map<const Eigen::VectorXd>(r.x[k].data(), n);
      }
    }
    t.clusters.push_back(std::move(c));
  }
  t.validate();
  return t;
}

}  // namespace crt
