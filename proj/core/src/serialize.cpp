#include "nlsteer/serialize.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace nlsteer {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec vec_from_json(const json& a) {
  Vec v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<int>(i)] = a[i].get<double>();
  return v;
}

json mat_to_json(const Mat& m) {
  json out;
  out["rows"] = m.rows();
  out["cols"] = m.cols();
  json d = json::array();
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) d.push_back(m(i, j));
  out["data"] = std::move(d);
  return out;
}

Mat mat_from_json(const json& j) {
  const int r = j.at("rows").get<int>(), c = j.at("cols").get<int>();
  const json& d = j.at("data");
  if (static_cast<int>(d.size()) != r * c) throw std::runtime_error("matrix payload size mismatch");
  Mat m(r, c);
  std::size_t k = 0;
  for (int i = 0; i < r; ++i)
    for (int jj = 0; jj < c; ++jj) m(i, jj) = d[k++].get<double>();
  return m;
}

json wrap(const std::string& kind, json payload) {
  json out;
  out["format"] = "nlsteer";
  out["version"] = kFormatVersion;
  out["kind"] = kind;
  out["payload"] = std::move(payload);
  return out;
}

json unwrap(const std::string& text, const std::string& kind) {
  json j = json::parse(text);
  if (j.at("format").get<std::string>() != "nlsteer")
    throw std::runtime_error("not an nlsteer container");
  if (j.at("version").get<int>() != kFormatVersion)
    throw std::runtime_error("unsupported container version");
  if (j.at("kind").get<std::string>() != kind)
    throw std::runtime_error("container holds '" + j.at("kind").get<std::string>() + "', expected '" +
                             kind + "'");
  return j.at("payload");
}

json site_to_json(const Site& s) {
  json j;
  j["layer"] = s.layer;
  j["position"] = s.position;
  j["point"] = "block_output";
  return j;
}

Site site_from_json(const json& j) {
  Site s;
  s.layer = j.at("layer").get<int>();
  s.position = j.at("position").get<int>();
  return s;
}

json block_to_json(const ResidualBlock& b) {
  json j;
  j["W1"] = mat_to_json(b.W1);
  j["b1"] = vec_to_json(b.b1);
  j["W2"] = mat_to_json(b.W2);
  j["b2"] = vec_to_json(b.b2);
  j["u1"] = vec_to_json(b.s1.u);
  j["v1"] = vec_to_json(b.s1.v);
  j["u2"] = vec_to_json(b.s2.u);
  j["v2"] = vec_to_json(b.s2.v);
  j["reseed1"] = b.s1.reseed_key;
  j["reseed2"] = b.s2.reseed_key;
  j["kappa"] = b.kappa;
  j["slope"] = b.slope;
  j["scale1"] = b.scale1;
  j["scale2"] = b.scale2;
  j["sigma1"] = b.sigma1;
  j["sigma2"] = b.sigma2;
  return j;
}

ResidualBlock block_from_json(const json& j) {
  ResidualBlock b;
  b.W1 = mat_from_json(j.at("W1"));
  b.b1 = vec_from_json(j.at("b1"));
  b.W2 = mat_from_json(j.at("W2"));
  b.b2 = vec_from_json(j.at("b2"));
  b.s1.u = vec_from_json(j.at("u1"));
  b.s1.v = vec_from_json(j.at("v1"));
  b.s2.u = vec_from_json(j.at("u2"));
  b.s2.v = vec_from_json(j.at("v2"));
  b.s1.reseed_key = j.at("reseed1").get<std::uint64_t>();
  b.s2.reseed_key = j.at("reseed2").get<std::uint64_t>();
  b.kappa = j.at("kappa").get<double>();
  b.slope = j.at("slope").get<double>();
  b.scale1 = j.at("scale1").get<double>();
  b.scale2 = j.at("scale2").get<double>();
  b.sigma1 = j.at("sigma1").get<double>();
  b.sigma2 = j.at("sigma2").get<double>();
  return b;
}

}  // namespace

std::string to_container(const FeatureMap& map) {
  json payload;
  if (map.kind() == "linear") {
    const auto& lin = dynamic_cast<const LinearFeatureMap&>(map);
    payload["map_kind"] = "linear";
    payload["dim"] = lin.dim();
    payload["W"] = mat_to_json(lin.basis());
  } else {
    const auto& net = dynamic_cast<const IResNetFeatureMap&>(map);
    const IResNetConfig& c = net.config();
    payload["map_kind"] = "iresnet";
    payload["dim"] = c.dim;
    payload["blocks"] = c.blocks;
    payload["width"] = c.width;
    payload["kappa"] = c.kappa;
    payload["slope"] = c.slope;
    payload["max_iters"] = c.inversion.max_iters;
    payload["rel_tol"] = c.inversion.rel_tol;
    json blocks = json::array();
    for (const ResidualBlock& b : net.blocks()) blocks.push_back(block_to_json(b));
    payload["block_params"] = std::move(blocks);
  }
  return wrap("feature_map", std::move(payload)).dump(2);
}

std::unique_ptr<FeatureMap> featmap_from_container(const std::string& text) {
  json p = unwrap(text, "feature_map");
  const std::string mk = p.at("map_kind").get<std::string>();
  if (mk == "linear") return std::make_unique<LinearFeatureMap>(mat_from_json(p.at("W")));
  if (mk != "iresnet") throw std::runtime_error("unknown map kind '" + mk + "'");
  IResNetConfig c;
  c.dim = p.at("dim").get<int>();
  c.blocks = p.at("blocks").get<int>();
  c.width = p.at("width").get<int>();
  c.kappa = p.at("kappa").get<double>();
  c.slope = p.at("slope").get<double>();
  c.inversion.max_iters = p.at("max_iters").get<int>();
  c.inversion.rel_tol = p.at("rel_tol").get<double>();
  std::vector<ResidualBlock> blocks;
  for (const json& bj : p.at("block_params")) blocks.push_back(block_from_json(bj));
  return std::make_unique<IResNetFeatureMap>(c, std::move(blocks));
}

std::string to_container(const SteeringDirection& dir) {
  json p;
  p["dim"] = dir.v.size();
  p["v"] = vec_to_json(dir.v);
  p["scheme"] = dir.scheme == SteeringScheme::ablation ? "ablation" : "actadd";
  p["alpha"] = dir.alpha;
  p["layer_scope"] = dir.layer_scope;
  return wrap("steering_direction", std::move(p)).dump(2);
}

SteeringDirection steering_from_container(const std::string& text) {
  json p = unwrap(text, "steering_direction");
  SteeringDirection dir;
  dir.v = vec_from_json(p.at("v"));
  dir.scheme =
      p.at("scheme").get<std::string>() == "ablation" ? SteeringScheme::ablation : SteeringScheme::actadd;
  dir.alpha = p.at("alpha").get<double>();
  dir.layer_scope = p.at("layer_scope").get<int>();
  return dir;
}

namespace {

json subject_config_to_json(const SubjectConfig& c) {
  json j;
  j["layers"] = c.layers;
  j["width"] = c.width;
  j["seq_len"] = c.seq_len;
  j["input_dim"] = c.input_dim;
  j["r0"] = c.r0;
  j["radius_min"] = c.radius_min;
  j["radius_max"] = c.radius_max;
  j["band_max"] = c.band_max;
  j["comply_radius_lo"] = c.comply_radius_lo;
  j["comply_radius_hi"] = c.comply_radius_hi;
  j["label_margin"] = c.label_margin;
  j["planted_layer"] = c.planted_layer;
  j["encode_position"] = c.encode_position;
  j["carrier_position"] = c.carrier_position;
  j["mix_gain"] = c.mix_gain;
  j["anchor_weight"] = c.anchor_weight;
  j["embed_scale"] = c.embed_scale;
  j["mlp_gain"] = c.mlp_gain;
  j["mlp_gain_late"] = c.mlp_gain_late;
  j["mlp_hidden"] = c.mlp_hidden;
  j["vote_gain"] = c.vote_gain;
  j["vote_sharpness"] = c.vote_sharpness;
  j["cert_angle_gain"] = c.cert_angle_gain;
  j["foothold_noise"] = c.foothold_noise;
  j["foothold_gain"] = c.foothold_gain;
  j["radius_eps"] = c.radius_eps;
  return j;
}

SubjectConfig subject_config_from_json(const json& j) {
  SubjectConfig c;
  c.layers = j.at("layers").get<int>();
  c.width = j.at("width").get<int>();
  c.seq_len = j.at("seq_len").get<int>();
  c.input_dim = j.at("input_dim").get<int>();
  c.r0 = j.at("r0").get<double>();
  c.radius_min = j.at("radius_min").get<double>();
  c.radius_max = j.at("radius_max").get<double>();
  c.band_max = j.at("band_max").get<double>();
  c.comply_radius_lo = j.at("comply_radius_lo").get<double>();
  c.comply_radius_hi = j.at("comply_radius_hi").get<double>();
  c.label_margin = j.at("label_margin").get<double>();
  c.planted_layer = j.at("planted_layer").get<int>();
  c.encode_position = j.at("encode_position").get<int>();
  c.carrier_position = j.at("carrier_position").get<int>();
  c.mix_gain = j.at("mix_gain").get<double>();
  c.anchor_weight = j.at("anchor_weight").get<double>();
  c.embed_scale = j.at("embed_scale").get<double>();
  c.mlp_gain = j.at("mlp_gain").get<double>();
  c.mlp_gain_late = j.at("mlp_gain_late").get<double>();
  c.mlp_hidden = j.at("mlp_hidden").get<int>();
  c.vote_gain = j.at("vote_gain").get<double>();
  c.vote_sharpness = j.at("vote_sharpness").get<double>();
  c.cert_angle_gain = j.at("cert_angle_gain").get<double>();
  c.foothold_noise = j.at("foothold_noise").get<double>();
  c.foothold_gain = j.at("foothold_gain").get<double>();
  c.radius_eps = j.at("radius_eps").get<double>();
  return c;
}

}  // namespace

std::string to_container(const Subject& subject) {
  const Subject::Params& p = subject.params();
  json payload;
  payload["config"] = subject_config_to_json(subject.config());
  payload["seed"] = subject.seed();
  payload["embed"] = mat_to_json(p.embed);
  payload["qc1"] = vec_to_json(p.qc1);
  payload["qc2"] = vec_to_json(p.qc2);
  payload["qc3"] = vec_to_json(p.qc3);
  payload["qp1"] = vec_to_json(p.qp1);
  payload["qp2"] = vec_to_json(p.qp2);
  payload["qf"] = vec_to_json(p.qf);
  payload["qv"] = vec_to_json(p.qv);
  payload["qg1"] = vec_to_json(p.qg1);
  payload["qg2"] = vec_to_json(p.qg2);
  payload["wpsi"] = vec_to_json(p.wpsi);
  payload["spread"] = vec_to_json(p.spread);
  payload["cert_threshold"] = p.cert_threshold;
  payload["cert_upper"] = p.cert_upper;
  json blocks = json::array();
  for (const auto& b : p.blocks) {
    json bj;
    bj["mix"] = mat_to_json(b.mix);
    bj["mlp_in"] = mat_to_json(b.mlp_in);
    bj["mlp_bias"] = vec_to_json(b.mlp_bias);
    bj["mlp_out"] = mat_to_json(b.mlp_out);
    blocks.push_back(std::move(bj));
  }
  payload["blocks"] = std::move(blocks);
  return wrap("subject", std::move(payload)).dump(2);
}

Subject subject_from_container(const std::string& text) {
  json p = unwrap(text, "subject");
  SubjectConfig cfg = subject_config_from_json(p.at("config"));
  Subject::Params params;
  params.embed = mat_from_json(p.at("embed"));
  params.qc1 = vec_from_json(p.at("qc1"));
  params.qc2 = vec_from_json(p.at("qc2"));
  params.qc3 = vec_from_json(p.at("qc3"));
  params.qp1 = vec_from_json(p.at("qp1"));
  params.qp2 = vec_from_json(p.at("qp2"));
  params.qf = vec_from_json(p.at("qf"));
  params.qv = vec_from_json(p.at("qv"));
  params.qg1 = vec_from_json(p.at("qg1"));
  params.qg2 = vec_from_json(p.at("qg2"));
  params.wpsi = vec_from_json(p.at("wpsi"));
  params.spread = vec_from_json(p.at("spread"));
  params.cert_threshold = p.at("cert_threshold").get<double>();
  params.cert_upper = p.at("cert_upper").get<double>();
  for (const json& bj : p.at("blocks")) {
    Subject::Block b;
    b.mix = mat_from_json(bj.at("mix"));
    b.mlp_in = mat_from_json(bj.at("mlp_in"));
    b.mlp_bias = vec_from_json(bj.at("mlp_bias"));
    b.mlp_out = mat_from_json(bj.at("mlp_out"));
    params.blocks.push_back(std::move(b));
  }
  return Subject(cfg, p.at("seed").get<std::uint64_t>(), std::move(params));
}

std::string to_container(const LossSiteSet& sites) {
  json payload;
  payload["tau"] = sites.tau;
  json entries = json::array();
  for (const SiteStats& st : sites.entries) {
    json e;
    e["site"] = site_to_json(st.site);
    e["v"] = vec_to_json(st.v);
    e["mu_plus"] = st.mu_plus;
    e["auc"] = st.auc;
    entries.push_back(std::move(e));
  }
  payload["entries"] = std::move(entries);
  return wrap("loss_site_set", std::move(payload)).dump(2);
}

LossSiteSet sites_from_container(const std::string& text) {
  json p = unwrap(text, "loss_site_set");
  LossSiteSet out;
  out.tau = p.at("tau").get<double>();
  for (const json& e : p.at("entries")) {
    SiteStats st;
    st.site = site_from_json(e.at("site"));
    st.v = vec_from_json(e.at("v"));
    st.mu_plus = e.at("mu_plus").get<double>();
    st.auc = e.at("auc").get<double>();
    out.entries.push_back(std::move(st));
  }
  return out;
}

std::string dataset_to_jsonl(const ContrastiveDataset& data, int input_dim) {
  std::ostringstream os;
  auto emit = [&](const std::vector<Example>& exs, const char* split) {
    for (const Example& ex : exs) {
      json j;
      json flat = json::array();
      for (int t = 0; t < ex.input.rows(); ++t)
        for (int i = 0; i < ex.input.cols(); ++i) flat.push_back(ex.input(t, i));
      j["input"] = std::move(flat);
      j["label"] = ex.comply ? "comply" : "refuse";
      j["radius"] = ex.radius;
      j["split"] = split;
      os << j.dump() << "\n";
    }
  };
  emit(data.train_pos, "train");
  emit(data.train_neg, "train");
  emit(data.test_pos, "test");
  emit(data.test_neg, "test");
  (void)input_dim;
  return os.str();
}

ContrastiveDataset dataset_from_jsonl(const std::string& text, int seq_len, int input_dim) {
  ContrastiveDataset out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    Example ex;
    const json& flat = j.at("input");
    if (static_cast<int>(flat.size()) != seq_len * input_dim)
      throw std::runtime_error("dataset line has wrong input size");
    ex.input = Mat(seq_len, input_dim);
    std::size_t k = 0;
    for (int t = 0; t < seq_len; ++t)
      for (int i = 0; i < input_dim; ++i) ex.input(t, i) = flat[k++].get<double>();
    ex.comply = j.at("label").get<std::string>() == "comply";
    ex.radius = j.at("radius").get<double>();
    const bool train = j.at("split").get<std::string>() == "train";
    auto& bucket = train ? (ex.comply ? out.train_pos : out.train_neg)
                         : (ex.comply ? out.test_pos : out.test_neg);
    bucket.push_back(std::move(ex));
  }
  return out;
}

std::string train_report_to_json(const TrainReport& report, const TrainConfig& cfg) {
  json j;
  j["site"] = site_to_json(cfg.site);
  j["coords"] = cfg.coords;
  j["tau"] = cfg.tau;
  j["seed"] = cfg.seed;
  j["steps"] = cfg.steps;
  j["batch"] = cfg.batch;
  j["learning_rate"] = cfg.learning_rate;
  j["map"] = {{"dim", cfg.map.dim},       {"blocks", cfg.map.blocks},
              {"width", cfg.map.width},   {"kappa", cfg.map.kappa},
              {"slope", cfg.map.slope},   {"max_iters", cfg.map.inversion.max_iters},
              {"rel_tol", cfg.map.inversion.rel_tol}};
  j["mu_bar_plus"] = report.mu_bar_plus;
  j["initial_loss"] = report.initial_loss;
  j["final_loss"] = report.final_loss;
  j["skipped_pairs"] = report.skipped_pairs;
  j["total_pairs"] = report.total_pairs;
  j["wall_clock_s"] = report.wall_clock_s;
  if (report.grad_check_max_rel_err >= 0.0) j["grad_check_max_rel_err"] = report.grad_check_max_rel_err;
  j["saturation_steps"] = report.saturation_steps;
  j["saturation"] = report.saturation;
  return j.dump(2);
}

std::string loss_curve_to_csv(const TrainReport& report) {
  std::ostringstream os;
  os << "step,loss\n";
  os.precision(17);
  for (std::size_t i = 0; i < report.loss_curve.size(); ++i) os << i << "," << report.loss_curve[i] << "\n";
  return os.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace nlsteer
