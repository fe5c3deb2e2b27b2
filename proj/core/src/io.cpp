#include "lqhmm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

namespace lqhmm {

using ordered_json = nlohmann::ordered_json;

std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& field, long row, int col) {
  double v;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    throw DataFormatError("non-numeric cell '" + field + "' at row " +
                          std::to_string(row) + ", column " + std::to_string(col));
  return v;
}

long parse_occasion(const std::string& field, long row) {
  long v;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last || v < 1)
    throw DataFormatError("occasion column must be a positive integer, got '" + field +
                          "' at row " + std::to_string(row));
  return v;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataFormatError("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace

PanelDataset ingest_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataFormatError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataFormatError("'" + path + "' is empty");
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "subject_id" || header[1] != "t" ||
      header[2] != "y")
    throw DataFormatError("header must start with subject_id,t,y; got '" + line + "'");

  PanelDataset data;
  data.covariate_names.assign(header.begin() + 3, header.end());
  const int q = data.q();

  struct Row {
    long t;
    double y;
    Eigen::VectorXd x;
  };
  std::map<std::string, std::vector<Row>> rows;
  std::vector<std::string> subject_order;

  long row_number = 1;
  while (std::getline(in, line)) {
    ++row_number;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) != 3 + q)
      throw DataFormatError("row " + std::to_string(row_number) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(3 + q));
    Row r;
    r.t = parse_occasion(fields[1], row_number);
    r.y = parse_double(fields[2], row_number, 3);
    r.x.resize(q);
    for (int j = 0; j < q; ++j) r.x[j] = parse_double(fields[3 + j], row_number, 4 + j);

    auto it = rows.find(fields[0]);
    if (it == rows.end()) {
      subject_order.push_back(fields[0]);
      it = rows.emplace(fields[0], std::vector<Row>{}).first;
    }
    it->second.push_back(std::move(r));
  }
  if (subject_order.empty()) throw DataFormatError("'" + path + "' has no data rows");

  for (const auto& id : subject_order) {
    auto& rs = rows[id];
    std::sort(rs.begin(), rs.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
    const int T_i = static_cast<int>(rs.size());
    for (int t = 0; t < T_i; ++t)
      if (rs[t].t != t + 1)
        throw DataFormatError(
            "subject " + id + " violates monotone drop-out: occasions must be "
            "contiguous 1..T_i but occasion " + std::to_string(t + 1) +
            (rs[t].t == rs[t != 0 ? t - 1 : 0].t ? " is duplicated" : " is missing"));
    Subject s;
    s.id = id;
    s.y.resize(T_i);
    s.X.resize(T_i, q);
    for (int t = 0; t < T_i; ++t) {
      s.y[t] = rs[t].y;
      s.X.row(t) = rs[t].x.transpose();
    }
    data.subjects.push_back(std::move(s));
    data.T_max = std::max(data.T_max, T_i);
  }
  data.validate();
  return data;
}

void write_panel_csv(const PanelDataset& data, const std::string& path) {
  auto out = open_out(path);
  out << "subject_id,t,y";
  for (const auto& name : data.covariate_names) out << "," << name;
  out << "\n";
  for (const auto& s : data.subjects)
    for (int t = 0; t < s.occasions(); ++t) {
      out << s.id << "," << (t + 1) << "," << format_double(s.y[t]);
      for (int j = 0; j < data.q(); ++j) out << "," << format_double(s.X(t, j));
      out << "\n";
    }
}

namespace {

ordered_json params_to_json(const QldoParams& p) {
  ordered_json j;
  j["q"] = p.q();
  j["m"] = p.m();
  j["G"] = p.G();
  j["beta"] = std::vector<double>(p.beta.data(), p.beta.data() + p.beta.size());
  j["alpha"] = std::vector<double>(p.alpha.data(), p.alpha.data() + p.alpha.size());
  j["sigma"] = p.sigma;
  j["delta"] = std::vector<double>(p.delta.data(), p.delta.data() + p.delta.size());
  ordered_json Q = ordered_json::array();
  for (const auto& M : p.Q) {
    ordered_json rows = ordered_json::array();
    for (int k = 0; k < M.rows(); ++k) {
      ordered_json row = ordered_json::array();
      for (int h = 0; h < M.cols(); ++h) row.push_back(M(k, h));
      rows.push_back(std::move(row));
    }
    Q.push_back(std::move(rows));
  }
  j["Q"] = std::move(Q);
  j["lambda0"] =
      std::vector<double>(p.lambda0.data(), p.lambda0.data() + p.lambda0.size());
  j["lambda1"] = p.lambda1;
  return j;
}

QldoParams params_from_json(const ordered_json& j) {
  QldoParams p;
  const int q = j.at("q").get<int>();
  const int m = j.at("m").get<int>();
  const int G = j.at("G").get<int>();
  auto vec = [](const ordered_json& a) {
    Eigen::VectorXd v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<long>(i)] = a[i].get<double>();
    return v;
  };
  p.beta = vec(j.at("beta"));
  p.alpha = vec(j.at("alpha"));
  p.sigma = j.at("sigma").get<double>();
  p.delta = vec(j.at("delta"));
  for (const auto& rows : j.at("Q")) {
    Eigen::MatrixXd M(m, m);
    for (int k = 0; k < m; ++k)
      for (int h = 0; h < m; ++h) M(k, h) = rows[k][h].get<double>();
    p.Q.push_back(std::move(M));
  }
  p.lambda0 = vec(j.at("lambda0"));
  p.lambda1 = j.at("lambda1").get<double>();
  if (p.q() != q || p.m() != m || p.G() != G)
    throw DataFormatError("params.json dimension metadata does not match its arrays");
  p.validate();
  return p;
}

}  // namespace

void write_params_json(const ParamsFile& file, const std::string& path) {
  ordered_json j;
  j["model"] = "lqhmm-qldo";
  j["version"] = 1;
  j["n_subjects"] = file.n_subjects;
  j["covariates"] = file.covariate_names;
  ordered_json fits = ordered_json::array();
  for (const auto& e : file.entries) {
    ordered_json f;
    f["tau"] = e.tau;
    f["converged"] = e.converged;
    f["start_index"] = e.start_index;
    f["loglik"] = e.loglik;
    f["n_params"] = e.n_params;
    f["aic"] = e.aic;
    f["bic"] = e.bic;
    f.update(params_to_json(e.params));
    fits.push_back(std::move(f));
  }
  j["fits"] = std::move(fits);
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

ParamsFile read_params_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataFormatError("cannot open '" + path + "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& err) {
    throw DataFormatError("cannot parse '" + path + "': " + err.what());
  }
  ParamsFile file;
  try {
    file.n_subjects = j.at("n_subjects").get<int>();
    file.covariate_names = j.at("covariates").get<std::vector<std::string>>();
    for (const auto& f : j.at("fits")) {
      ParamsFileEntry e;
      e.tau = f.at("tau").get<double>();
      e.converged = f.at("converged").get<bool>();
      e.start_index = f.at("start_index").get<int>();
      e.loglik = f.at("loglik").get<double>();
      e.n_params = f.at("n_params").get<int>();
      e.aic = f.at("aic").get<double>();
      e.bic = f.at("bic").get<double>();
      e.params = params_from_json(f);
      canonicalize(e.params);
      file.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& err) {
    throw DataFormatError("invalid params file '" + path + "': " + err.what());
  }
  return file;
}

void write_posteriors_csv(const PanelDataset& data, const Posteriors& posteriors,
                          const std::string& path) {
  const int m = static_cast<int>(posteriors.subjects.at(0).u_single.cols());
  const int G = static_cast<int>(posteriors.zeta.cols());
  auto out = open_out(path);
  out << "subject_id,t,map_state,map_class";
  for (int h = 0; h < m; ++h) out << ",u_" << (h + 1);
  for (int g = 0; g < G; ++g) out << ",zeta_" << (g + 1);
  out << "\n";
  for (int i = 0; i < data.n(); ++i) {
    const auto& s = data.subjects[i];
    const auto& u = posteriors.subjects[i].u_single;
    int map_class = 0;
    posteriors.zeta.row(i).maxCoeff(&map_class);
    for (int t = 0; t < s.occasions(); ++t) {
      int map_state = 0;
      u.row(t).maxCoeff(&map_state);
      out << s.id << "," << (t + 1) << "," << (map_state + 1) << "," << (map_class + 1);
      for (int h = 0; h < m; ++h) out << "," << format_double(u(t, h));
      for (int g = 0; g < G; ++g) out << "," << format_double(posteriors.zeta(i, g));
      out << "\n";
    }
  }
}

void write_loglik_trace_csv(const FitResult& fit, const std::string& path) {
  auto out = open_out(path);
  out << "start,iteration,loglik\n";
  for (std::size_t r = 0; r < fit.loglik_trace.size(); ++r)
    out << fit.start_index << "," << r << "," << format_double(fit.loglik_trace[r])
        << "\n";
}

void write_grid_csv(const GridResult& grid, const std::string& path) {
  auto out = open_out(path);
  out << "m,G,loglik,n_params,aic,bic,converged,start_index\n";
  for (const auto& c : grid.cells)
    out << c.m << "," << c.G << "," << format_double(c.loglik) << "," << c.n_params
        << "," << format_double(c.aic) << "," << format_double(c.bic) << ","
        << (c.converged ? 1 : 0) << "," << c.start_index << "\n";
}

void write_grid_json(const GridResult& grid, const std::string& path) {
  ordered_json j;
  j["selected_by_aic"] = {{"m", grid.aic_m}, {"G", grid.aic_G}};
  j["selected_by_bic"] = {{"m", grid.bic_m}, {"G", grid.bic_G}};
  ordered_json cells = ordered_json::array();
  for (const auto& c : grid.cells) {
    ordered_json cj;
    cj["m"] = c.m;
    cj["G"] = c.G;
    cj["loglik"] = c.loglik;
    cj["n_params"] = c.n_params;
    cj["aic"] = c.aic;
    cj["bic"] = c.bic;
    cj["converged"] = c.converged;
    cj["start_index"] = c.start_index;
    cells.push_back(std::move(cj));
  }
  j["cells"] = std::move(cells);
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

void write_bootstrap_csv(const BootstrapResult& boot, const std::string& path) {
  auto out = open_out(path);
  out << "parameter,point,lower,upper,sd\n";
  for (std::size_t p = 0; p < boot.names.size(); ++p)
    out << boot.names[p] << "," << format_double(boot.point[static_cast<long>(p)]) << ","
        << format_double(boot.lower[static_cast<long>(p)]) << ","
        << format_double(boot.upper[static_cast<long>(p)]) << ","
        << format_double(boot.sd[static_cast<long>(p)]) << "\n";
}

void write_bootstrap_json(const BootstrapResult& boot, const std::string& path) {
  ordered_json j;
  j["B"] = boot.B;
  j["level"] = boot.level;
  j["n_failed"] = boot.n_failed;
  ordered_json params = ordered_json::array();
  for (std::size_t p = 0; p < boot.names.size(); ++p) {
    ordered_json pj;
    pj["name"] = boot.names[p];
    pj["point"] = boot.point[static_cast<long>(p)];
    pj["lower"] = boot.lower[static_cast<long>(p)];
    pj["upper"] = boot.upper[static_cast<long>(p)];
    pj["sd"] = boot.sd[static_cast<long>(p)];
    params.push_back(std::move(pj));
  }
  j["parameters"] = std::move(params);
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

void write_bias_csv(const ReplicateStudyResult& study, const std::string& path) {
  auto out = open_out(path);
  out << "tau,m,G,parameter,truth,mean_bias,sd,mean_bias_shifted,n_used,n_failed\n";
  for (const auto& t : study.bias)
    for (std::size_t r = 0; r < t.names.size(); ++r)
      out << format_double(t.tau) << "," << t.m << "," << t.G << "," << t.names[r] << ","
          << format_double(t.truth[static_cast<long>(r)]) << ","
          << format_double(t.mean_bias[static_cast<long>(r)]) << ","
          << format_double(t.sd[static_cast<long>(r)]) << ","
          << format_double(t.mean_bias_shifted[static_cast<long>(r)]) << "," << t.n_used
          << "," << t.n_failed << "\n";
}

void write_model_choice_csv(const ReplicateStudyResult& study, const std::string& path) {
  auto out = open_out(path);
  out << "tau,m,G,aic_freq,bic_freq,n_used,n_failed\n";
  for (const auto& t : study.choice)
    for (const auto& c : t.cells)
      out << format_double(t.tau) << "," << c.m << "," << c.G << ","
          << format_double(c.aic_freq) << "," << format_double(c.bic_freq) << ","
          << t.n_used << "," << t.n_failed << "\n";
}

void write_panel_summary_csv(const PanelDataset& data, const std::string& path) {
  auto out = open_out(path);
  out << "t,n_subjects\n";
  const auto counts = data.subjects_at_occasion();
  for (std::size_t t = 0; t < counts.size(); ++t)
    out << (t + 1) << "," << counts[t] << "\n";
}

void write_sim_truth_csv(const SimulatedPanel& panel, const std::string& path) {
  auto out = open_out(path);
  out << "subject_id,t,true_state,true_class\n";
  for (std::size_t i = 0; i < panel.data.subjects.size(); ++i) {
    const auto& s = panel.data.subjects[i];
    for (int t = 0; t < s.occasions(); ++t)
      out << s.id << "," << (t + 1) << "," << (panel.true_states[i][t] + 1) << ","
          << (panel.true_class[i] + 1) << "\n";
  }
}

}  // namespace lqhmm
