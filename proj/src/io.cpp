#include "medadhere/io.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace medadhere::io {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open " + file.string());
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (first) {
      table.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() != table.header.size())
      throw FormatError(file.string() + ": row has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(table.header.size()));
    table.rows.push_back(std::move(cells));
  }
  if (first) throw FormatError(file.string() + ": missing header");
  return table;
}

double parse_double(const std::string& s, const fs::path& file) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw FormatError(file.string() + ": not a number: '" + s + "'");
  return v;
}

int parse_int(const std::string& s, const fs::path& file) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw FormatError(file.string() + ": not an integer: '" + s + "'");
  return v;
}

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd vector_from_json(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Json diagnostics_json(const std::vector<ParameterDiagnostics>& diags) {
  Json out = Json::array();
  for (const auto& d : diags) out.push_back({{"name", d.name}, {"rhat", d.rhat}, {"ess", d.ess}});
  return out;
}

std::vector<ParameterDiagnostics> diagnostics_from_json(const Json& j) {
  std::vector<ParameterDiagnostics> out;
  for (const auto& d : j)
    out.push_back({d.at("name").get<std::string>(), d.at("rhat").get<double>(),
                   d.at("ess").get<double>()});
  return out;
}

std::vector<Json> read_jsonl(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open " + file.string());
  std::vector<Json> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::exception& e) {
      throw FormatError(file.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

HealthParams unflatten_health(const Eigen::VectorXd& v, int k, int p) {
  HealthParams h;
  h.beta.resize(k, p);
  int i = 0;
  for (int j = 0; j < k; ++j)
    for (int c = 0; c < p; ++c) h.beta(j, c) = v[i++];
  auto take = [&](Eigen::VectorXd& out) {
    out.resize(k);
    for (int j = 0; j < k; ++j) out[j] = v[i++];
  };
  take(h.rho);
  take(h.phi);
  take(h.sigma_eps);
  h.rho_eps = v[i++];
  take(h.sigma_nu);
  take(h.sigma_zero);
  return h;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out << text;
    if (!out) throw FormatError("write failed: " + tmp.string());
  }
  fs::rename(tmp, file);
}

Json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open " + file.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
}

void write_json(const fs::path& file, const Json& j) { write_text(file, j.dump(2) + "\n"); }

std::string to_bitstring(std::span<const std::int8_t> path) {
  std::string s(path.size(), '0');
  for (std::size_t t = 0; t < path.size(); ++t) s[t] = path[t] > 0 ? '1' : '0';
  return s;
}

AdherencePath from_bitstring(const std::string& bits) {
  AdherencePath path(bits.size());
  for (std::size_t t = 0; t < bits.size(); ++t) {
    if (bits[t] != '0' && bits[t] != '1') throw FormatError("bad adherence bitstring: " + bits);
    path[t] = bits[t] == '1' ? 1 : -1;
  }
  return path;
}

void write_cohort(const fs::path& dir, const std::vector<PatientRecord>& patients) {
  fs::create_directories(dir);
  int k = 0;
  for (const auto& p : patients)
    for (const auto& o : p.observations) k = std::max(k, static_cast<int>(o.values.size()));

  std::string adh = "id,day,adherence\n";
  std::string vis = "id,day";
  for (int j = 1; j <= k; ++j) vis += ",y" + std::to_string(j);
  vis += "\n";
  std::string cov = "id";
  if (!patients.empty())
    for (const auto& name : patients.front().covariates.names) cov += "," + name;
  cov += "\n";

  for (const auto& p : patients) {
    for (int t = 0; t < p.horizon; ++t) {
      const char* code = p.adherence[t] == AdherenceDay::Taken      ? "1"
                         : p.adherence[t] == AdherenceDay::NotTaken ? "0"
                                                                    : "NA";
      adh += p.id + "," + std::to_string(t + 1) + "," + code + "\n";
    }
    for (const auto& o : p.observations) {
      vis += p.id + "," + std::to_string(o.day);
      for (int j = 0; j < k; ++j) {
        vis += ",";
        if (j < static_cast<int>(o.values.size()) && o.values[j]) vis += format_double(*o.values[j]);
      }
      vis += "\n";
    }
    cov += p.id;
    for (Eigen::Index j = 0; j < p.covariates.values.size(); ++j)
      cov += "," + format_double(p.covariates.values[j]);
    cov += "\n";
  }
  write_text(dir / kPatientsFile, adh);
  write_text(dir / kVisitsFile, vis);
  write_text(dir / kCovariatesFile, cov);
}

std::vector<PatientRecord> read_cohort(const fs::path& dir) {
  const CsvTable cov = read_csv(dir / kCovariatesFile);
  if (cov.header.empty() || cov.header[0] != "id")
    throw FormatError((dir / kCovariatesFile).string() + ": first column must be 'id'");
  std::vector<PatientRecord> patients;
  std::unordered_map<std::string, std::size_t> index;
  const std::vector<std::string> names(cov.header.begin() + 1, cov.header.end());
  for (const auto& row : cov.rows) {
    PatientRecord p;
    p.id = row[0];
    if (index.count(p.id)) throw FormatError("duplicate patient id in covariates.csv: " + p.id);
    p.covariates.names = names;
    p.covariates.values.resize(static_cast<Eigen::Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j)
      p.covariates.values[static_cast<Eigen::Index>(j)] = parse_double(row[j + 1], dir / kCovariatesFile);
    index[p.id] = patients.size();
    patients.push_back(std::move(p));
  }
  auto lookup = [&](const std::string& id, const fs::path& file) -> PatientRecord& {
    auto it = index.find(id);
    if (it == index.end()) throw FormatError(file.string() + ": unknown patient id " + id);
    return patients[it->second];
  };

  const fs::path adh_file = dir / kPatientsFile;
  const CsvTable adh = read_csv(adh_file);
  if (adh.header != std::vector<std::string>{"id", "day", "adherence"})
    throw FormatError(adh_file.string() + ": header must be id,day,adherence");
  for (const auto& row : adh.rows) {
    PatientRecord& p = lookup(row[0], adh_file);
    const int day = parse_int(row[1], adh_file);
    if (day != p.horizon + 1)
      throw FormatError(adh_file.string() + ": days for " + p.id + " must run 1,2,... in order");
    AdherenceDay value;
    if (row[2] == "1") value = AdherenceDay::Taken;
    else if (row[2] == "0") value = AdherenceDay::NotTaken;
    else if (row[2] == "NA" || row[2].empty()) value = AdherenceDay::Missing;
    else throw FormatError(adh_file.string() + ": adherence must be 1, 0 or NA");
    p.adherence.push_back(value);
    p.horizon = day;
  }

  const fs::path vis_file = dir / kVisitsFile;
  const CsvTable vis = read_csv(vis_file);
  if (vis.header.size() < 2 || vis.header[0] != "id" || vis.header[1] != "day")
    throw FormatError(vis_file.string() + ": header must start with id,day");
  const auto k = vis.header.size() - 2;
  for (const auto& row : vis.rows) {
    PatientRecord& p = lookup(row[0], vis_file);
    HealthObservation o;
    o.day = parse_int(row[1], vis_file);
    for (std::size_t j = 0; j < k; ++j) {
      if (row[j + 2].empty() || row[j + 2] == "NA") o.values.emplace_back(std::nullopt);
      else o.values.emplace_back(parse_double(row[j + 2], vis_file));
    }
    p.observations.push_back(std::move(o));
  }
  for (auto& p : patients) {
    try {
      p.validate(static_cast<int>(k));
    } catch (const InvalidInput& e) {
      throw FormatError(dir.string() + ": patient " + p.id + ": " + e.what());
    }
  }
  return patients;
}

Json to_json(const AdherenceParams& params) {
  return {{"lambda", to_vector(params.lambda)}, {"sigma_delta", params.sigma_delta}};
}

Json to_json(const HealthParams& h) {
  Json beta = Json::array();
  for (Eigen::Index j = 0; j < h.beta.rows(); ++j) {
    std::vector<double> row;
    for (Eigen::Index c = 0; c < h.beta.cols(); ++c) row.push_back(h.beta(j, c));
    beta.push_back(row);
  }
  return {{"beta", beta},
          {"rho", to_vector(h.rho)},
          {"phi", to_vector(h.phi)},
          {"sigma_eps", to_vector(h.sigma_eps)},
          {"rho_eps", h.rho_eps},
          {"sigma_nu", to_vector(h.sigma_nu)},
          {"sigma_zero", to_vector(h.sigma_zero)}};
}

AdherenceParams adherence_params_from_json(const Json& j) {
  AdherenceParams a;
  a.lambda = vector_from_json(j.at("lambda"));
  a.sigma_delta = j.at("sigma_delta").get<double>();
  return a;
}

HealthParams health_params_from_json(const Json& j) {
  HealthParams h;
  const auto rows = j.at("beta").get<std::vector<std::vector<double>>>();
  const auto k = static_cast<Eigen::Index>(rows.size());
  const auto p = k > 0 ? static_cast<Eigen::Index>(rows.front().size()) : 0;
  h.beta.resize(k, p);
  for (Eigen::Index r = 0; r < k; ++r) {
    if (static_cast<Eigen::Index>(rows[r].size()) != p) throw FormatError("ragged beta matrix");
    for (Eigen::Index c = 0; c < p; ++c) h.beta(r, c) = rows[r][c];
  }
  h.rho = vector_from_json(j.at("rho"));
  h.phi = vector_from_json(j.at("phi"));
  h.sigma_eps = vector_from_json(j.at("sigma_eps"));
  h.rho_eps = j.at("rho_eps").get<double>();
  h.sigma_nu = vector_from_json(j.at("sigma_nu"));
  h.sigma_zero = vector_from_json(j.at("sigma_zero"));
  return h;
}

void write_truth(const fs::path& file, const CohortWithTruth& cohort) {
  Json j;
  j["adherence_params"] = to_json(cohort.adherence_params);
  j["health_params"] = to_json(cohort.health_params);
  Json patients = Json::array();
  for (const auto& t : cohort.truths)
    patients.push_back({{"id", t.id},
                        {"delta", t.delta},
                        {"average_adherence", t.average_adherence()},
                        {"adherence", to_bitstring(t.adherence)}});
  j["patients"] = std::move(patients);
  write_json(file, j);
}

TruthFile read_truth(const fs::path& file) {
  const Json j = read_json(file);
  TruthFile t;
  try {
    t.adherence = adherence_params_from_json(j.at("adherence_params"));
    t.health = health_params_from_json(j.at("health_params"));
    for (const auto& p : j.at("patients")) {
      TruthRecord r;
      r.id = p.at("id").get<std::string>();
      r.delta = p.at("delta").get<double>();
      r.adherence = from_bitstring(p.at("adherence").get<std::string>());
      r.average_adherence = p.at("average_adherence").get<double>();
      t.patients.emplace(r.id, std::move(r));
    }
  } catch (const Json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  return t;
}

void write_adherence_posterior(const fs::path& dir, const AdherencePosterior& posterior) {
  fs::create_directories(dir);
  std::string draws, deltas;
  for (const auto& d : posterior.draws) {
    Json line = {{"chain", d.chain}, {"iter", d.iteration}};
    Json dl = line;
    line["lambda"] = to_vector(d.params.lambda);
    line["sigma_delta"] = d.params.sigma_delta;
    draws += line.dump() + "\n";
    Json map = Json::object();
    for (std::size_t i = 0; i < posterior.patient_ids.size(); ++i)
      map[posterior.patient_ids[i]] = d.deltas[static_cast<Eigen::Index>(i)];
    dl["deltas"] = std::move(map);
    deltas += dl.dump() + "\n";
  }
  write_text(dir / "draws.jsonl", draws);
  write_text(dir / "deltas.jsonl", deltas);
  Json meta = {{"covariate_names", posterior.covariate_names},
               {"patient_ids", posterior.patient_ids},
               {"n_draws", posterior.draws.size()},
               {"diagnostics", diagnostics_json(posterior.diagnostics)}};
  write_json(dir / "meta.json", meta);
}

AdherencePosterior read_adherence_posterior(const fs::path& dir) {
  const Json meta = read_json(dir / "meta.json");
  AdherencePosterior post;
  post.covariate_names = meta.at("covariate_names").get<std::vector<std::string>>();
  post.patient_ids = meta.at("patient_ids").get<std::vector<std::string>>();
  post.diagnostics = diagnostics_from_json(meta.at("diagnostics"));
  const auto draws = read_jsonl(dir / "draws.jsonl");
  const auto deltas = read_jsonl(dir / "deltas.jsonl");
  if (draws.size() != deltas.size())
    throw FormatError(dir.string() + ": draws.jsonl and deltas.jsonl differ in length");
  const auto n = static_cast<Eigen::Index>(post.patient_ids.size());
  for (std::size_t i = 0; i < draws.size(); ++i) {
    AdherenceDraw d;
    d.chain = draws[i].at("chain").get<int>();
    d.iteration = draws[i].at("iter").get<int>();
    d.params.lambda = vector_from_json(draws[i].at("lambda"));
    d.params.sigma_delta = draws[i].at("sigma_delta").get<double>();
    const Json& map = deltas[i].at("deltas");
    d.deltas.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) d.deltas[r] = map.at(post.patient_ids[r]).get<double>();
    post.draws.push_back(std::move(d));
  }
  return post;
}

void write_health_posterior(const fs::path& dir, const HealthPosterior& posterior) {
  fs::create_directories(dir);
  std::vector<std::string> labels;
  int k = 0;
  if (!posterior.draws.empty()) {
    labels = health_parameter_names(posterior.draws.front().params, posterior.covariate_names);
    k = posterior.draws.front().params.n_measures();
  }
  std::string text;
  for (const auto& d : posterior.draws) {
    const Eigen::VectorXd v = flatten_health(d.params);
    Json theta = Json::object();
    for (std::size_t i = 0; i < labels.size(); ++i) theta[labels[i]] = v[static_cast<Eigen::Index>(i)];
    Json line = {{"imputation", d.imputation}, {"chain", d.chain}, {"iter", d.iteration},
                 {"theta", std::move(theta)}};
    text += line.dump() + "\n";
  }
  write_text(dir / "draws.jsonl", text);
  Json meta = {{"schema", "medadhere.health_draws"},
               {"version", kHealthSchemaVersion},
               {"covariate_names", posterior.covariate_names},
               {"n_measures", k},
               {"labels", labels},
               {"n_draws", posterior.draws.size()},
               {"diagnostics", diagnostics_json(posterior.diagnostics)}};
  write_json(dir / "meta.json", meta);
}

HealthPosterior read_health_posterior(const fs::path& dir) {
  const Json meta = read_json(dir / "meta.json");
  if (meta.value("schema", "") != "medadhere.health_draws" ||
      meta.value("version", 0) != kHealthSchemaVersion)
    throw FormatError(dir.string() + ": unsupported health draw schema");
  HealthPosterior post;
  post.covariate_names = meta.at("covariate_names").get<std::vector<std::string>>();
  post.diagnostics = diagnostics_from_json(meta.at("diagnostics"));
  const int k = meta.at("n_measures").get<int>();
  const int p = static_cast<int>(post.covariate_names.size());
  const auto labels = meta.at("labels").get<std::vector<std::string>>();
  for (const auto& line : read_jsonl(dir / "draws.jsonl")) {
    HealthDraw d;
    d.imputation = line.at("imputation").get<int>();
    d.chain = line.at("chain").get<int>();
    d.iteration = line.at("iter").get<int>();
    Eigen::VectorXd v(static_cast<Eigen::Index>(labels.size()));
    const Json& theta = line.at("theta");
    for (std::size_t i = 0; i < labels.size(); ++i)
      v[static_cast<Eigen::Index>(i)] = theta.at(labels[i]).get<double>();
    d.params = unflatten_health(v, k, p);
    post.draws.push_back(std::move(d));
  }
  return post;
}

void write_smoothing_draws(const fs::path& file, const std::vector<SmoothingDraw>& draws) {
  std::string text;
  for (const auto& d : draws) {
    Json line = {{"iter", d.iteration},
                 {"theta_draw", d.theta_draw},
                 {"delta", d.trajectory.delta},
                 {"adherence", to_bitstring(d.trajectory.adherence)}};
    if (d.trajectory.alpha.size() > 0) {
      Json alpha = Json::array();
      for (Eigen::Index j = 0; j < d.trajectory.alpha.rows(); ++j) {
        std::vector<double> row;
        for (Eigen::Index t = 0; t < d.trajectory.alpha.cols(); ++t) row.push_back(d.trajectory.alpha(j, t));
        alpha.push_back(row);
      }
      line["alpha"] = std::move(alpha);
    }
    text += line.dump() + "\n";
  }
  write_text(file, text);
}

std::vector<SmoothingDraw> read_smoothing_draws(const fs::path& file) {
  std::vector<SmoothingDraw> out;
  for (const auto& line : read_jsonl(file)) {
    SmoothingDraw d;
    d.iteration = line.at("iter").get<int>();
    d.theta_draw = line.at("theta_draw").get<int>();
    d.trajectory.delta = line.at("delta").get<double>();
    d.trajectory.adherence = from_bitstring(line.at("adherence").get<std::string>());
    if (line.contains("alpha")) {
      const auto rows = line["alpha"].get<std::vector<std::vector<double>>>();
      d.trajectory.alpha.resize(static_cast<Eigen::Index>(rows.size()),
                                static_cast<Eigen::Index>(d.trajectory.adherence.size()));
      for (std::size_t j = 0; j < rows.size(); ++j)
        for (std::size_t t = 0; t < rows[j].size(); ++t)
          d.trajectory.alpha(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t)) = rows[j][t];
    }
    out.push_back(std::move(d));
  }
  return out;
}

namespace {

std::string hex_digest(EVP_MD_CTX* ctx) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += digits[md[i] >> 4];
    out += digits[md[i] & 0xF];
  }
  return out;
}

}  // namespace

std::string sha256_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open " + file.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 15];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  return hex_digest(ctx);
}

std::string sha256_string(const std::string& text) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx, text.data(), text.size());
  return hex_digest(ctx);
}

}  // namespace medadhere::io
