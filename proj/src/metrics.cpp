#include "objcustom/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "objcustom/injection.hpp"

namespace objcustom::metrics {

namespace fs = std::filesystem;

std::vector<double> Embedder::embed(const ImageTensor& img) const {
    if (!image_fn) throw std::invalid_argument("embedder '" + name + "' has no image side");
    auto v = image_fn(img);
    if (normalize) {
        double n = 0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n > 0)
            for (double& x : v) x /= n;
    }
    return v;
}

std::vector<double> Embedder::embed_text(const std::string& text) const {
    if (!text_fn) throw std::invalid_argument("embedder '" + name + "' has no text side");
    return text_fn(text);
}

Embedder encoder_embedder(const std::string& name, const id::EncoderSpec& spec) {
    auto enc = std::make_shared<id::FrozenEncoder>(id::FrozenEncoder::load(spec));
    Embedder e;
    e.name = name;
    e.role = EmbedderRole::ImageSim;
    e.dim = spec.d_enc;
    e.weights_ref = spec.weights_ref;
    e.image_fn = [enc](const ImageTensor& img) { return enc->encode(img).class_token.data; };
    return e;
}

Embedder toy_clip_image(const std::string& weights_ref) {
    return encoder_embedder("toy_clip_image", {id::EncoderRole::Reconstruction, 16, 4, 32, weights_ref, true});
}

Embedder toy_dino_image(const std::string& weights_ref) {
    return encoder_embedder("toy_dino_image", {id::EncoderRole::Detail, 16, 4, 32, weights_ref, true});
}

namespace {

std::string scenario_keyword(const std::string& background) { return background.substr(0, background.find('_')); }

std::array<double, 3> border_median(const ImageTensor& img) {
    std::array<double, 3> out{};
    for (int c = 0; c < std::min(img.channels, 3); ++c) {
        std::vector<double> v;
        for (int x = 0; x < img.width; ++x) {
            v.push_back(img.at(c, 0, x));
            if (img.height > 1) v.push_back(img.at(c, img.height - 1, x));
        }
        for (int y = 1; y + 1 < img.height; ++y) {
            v.push_back(img.at(c, y, 0));
            if (img.width > 1) v.push_back(img.at(c, y, img.width - 1));
        }
        auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
        std::nth_element(v.begin(), mid, v.end());
        out[static_cast<std::size_t>(c)] = *mid;
    }
    return out;
}

}  // namespace

Embedder toy_clip_text() {
    Embedder e;
    e.name = "toy_clip_text";
    e.role = EmbedderRole::TextSim;
    const auto& bgs = data::toy_backgrounds();
    e.dim = static_cast<int>(bgs.size());
    e.weights_ref = "toy:palette";
    std::vector<std::array<double, 3>> palette;
    for (const auto& b : bgs) palette.push_back(data::toy_background_mean(b));
    e.image_fn = [palette](const ImageTensor& img) {
        const auto m = border_median(img);
        std::vector<double> v;
        for (const auto& p : palette) {
            double d2 = 0;
            for (std::size_t c = 0; c < 3; ++c) d2 += (m[c] - p[c]) * (m[c] - p[c]);
            v.push_back(std::exp(-d2 / 0.02));
        }
        return v;
    };
    e.text_fn = [bgs](const std::string& text) {
        const auto words = inject::ToyTextEncoder::tokenize(text);
        std::vector<double> v(bgs.size(), 0.0);
        for (std::size_t k = 1; k < bgs.size(); ++k)
            if (std::find(words.begin(), words.end(), scenario_keyword(bgs[k])) != words.end()) {
                v[k] = 1.0;
                return v;
            }
        v[0] = 1.0;
        return v;
    };
    return e;
}

double similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("similarity: embedding widths differ");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (std::sqrt(na) < 1e-12 || std::sqrt(nb) < 1e-12) throw std::invalid_argument("similarity: zero embedding");
    return 100.0 * dot / (std::sqrt(na) * std::sqrt(nb));
}

double pairwise_sim(const Embedder& e, const ImageTensor& a, const ImageTensor& b) {
    if (e.role == EmbedderRole::TextSim) throw std::invalid_argument("pairwise_sim needs an image or face embedder");
    return similarity(e.embed(a), e.embed(b));
}

// ---- FID ----------------------------------------------------------------------

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat to_eigen(const Tensor& t) {
    Mat m(t.rows, t.cols);
    for (int r = 0; r < t.rows; ++r)
        for (int c = 0; c < t.cols; ++c) m(r, c) = t(r, c);
    return m;
}

void moments(const Mat& x, Vec& mu, Mat& cov) {
    mu = x.colwise().mean();
    const Mat centred = x.rowwise() - mu.transpose();
    cov = x.rows() > 1 ? Mat((centred.transpose() * centred) / static_cast<double>(x.rows() - 1))
                       : Mat::Zero(x.cols(), x.cols());
}

Mat sym_sqrt(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
    const Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double trace_sqrt_product(const Mat& a, const Mat& b) {
    const Mat s = sym_sqrt(a);
    const Mat m = s * b * s;
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

}  // namespace

FidResult fid(const Tensor& features_a, const Tensor& features_b) {
    require_shape(features_a.cols == features_b.cols && features_a.cols > 0, "fid: feature widths differ");
    require_shape(features_a.rows > 0 && features_b.rows > 0, "fid: empty feature set");
    const Mat a = to_eigen(features_a), b = to_eigen(features_b);
    Vec mu_a, mu_b;
    Mat ca, cb;
    moments(a, mu_a, ca);
    moments(b, mu_b, cb);

    FidResult r;
    const int dim = features_a.cols;
    const Mat eps = 1e-6 * Mat::Identity(dim, dim);
    if (features_a.rows <= dim || features_b.rows <= dim) {
        ca += eps;
        cb += eps;
        r.regularized = true;
    }
    double tr = trace_sqrt_product(ca, cb);
    if (!std::isfinite(tr)) {
        ca += eps;
        cb += eps;
        r.regularized = true;
        tr = trace_sqrt_product(ca, cb);
    }
    r.value = (mu_a - mu_b).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr;
    // Round-off can leave identical sets slightly negative.
    if (r.value < 0 && r.value > -1e-9 * (1.0 + ca.trace() + cb.trace())) r.value = 0;
    return r;
}

// ---- DiverSim-i ------------------------------------------------------------------

MeanStd diversim_from_embeddings(const std::map<std::string, std::vector<std::vector<double>>>& by_scenario,
                                 bool all_pairs) {
    if (by_scenario.size() < 2) throw std::invalid_argument("diversim_i needs at least two scenarios");
    std::vector<std::pair<int, const std::vector<double>*>> items;
    int sc = 0;
    for (const auto& [name, embs] : by_scenario) {
        if (embs.empty()) throw std::invalid_argument("diversim_i: scenario '" + name + "' has no generations");
        for (const auto& e : embs) items.emplace_back(sc, &e);
        ++sc;
    }
    std::vector<double> sims;
    for (std::size_t i = 0; i < items.size(); ++i)
        for (std::size_t j = i + 1; j < items.size(); ++j)
            if (all_pairs || items[i].first != items[j].first) sims.push_back(similarity(*items[i].second, *items[j].second));
    MeanStd m;
    m.mean = std::accumulate(sims.begin(), sims.end(), 0.0) / static_cast<double>(sims.size());
    double var = 0;
    for (double s : sims) var += (s - m.mean) * (s - m.mean);
    m.std = std::sqrt(var / static_cast<double>(sims.size()));
    return m;
}

MeanStd diversim_i(const std::map<std::string, std::vector<ImageTensor>>& by_scenario, const Embedder& e,
                   bool all_pairs) {
    std::map<std::string, std::vector<std::vector<double>>> embs;
    for (const auto& [name, imgs] : by_scenario) {
        auto& v = embs[name];
        for (const auto& img : imgs) v.push_back(e.embed(img));
    }
    return diversim_from_embeddings(embs, all_pairs);
}

// ---- colour fidelity -------------------------------------------------------------

std::vector<std::uint8_t> foreground_pixels(const ImageTensor& img, double threshold) {
    const auto m = border_median(img);
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(img.height) * img.width, 0);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double d2 = 0;
            for (int c = 0; c < 3; ++c) d2 += (img.at(c, y, x) - m[static_cast<std::size_t>(c)]) * (img.at(c, y, x) - m[static_cast<std::size_t>(c)]);
            keep[static_cast<std::size_t>(y) * img.width + x] = std::sqrt(d2) > threshold ? 1 : 0;
        }
    return keep;
}

std::vector<double> color_histogram(const ImageTensor& img, const std::vector<std::uint8_t>* keep) {
    require_shape(img.channels == 3, "color_histogram: need RGB");
    std::vector<double> h(64, 0.0);
    double total = 0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            if (keep != nullptr && (*keep)[static_cast<std::size_t>(y) * img.width + x] == 0) continue;
            int idx = 0;
            for (int c = 0; c < 3; ++c) idx = idx * 4 + std::min(3, static_cast<int>(img.at(c, y, x) * 4.0));
            h[static_cast<std::size_t>(idx)] += 1.0;
            total += 1.0;
        }
    if (total > 0)
        for (double& v : h) v /= total;
    return h;
}

double color_fidelity(const ImageTensor& generation, const ImageTensor& reference, const SegMask& reference_mask) {
    require_shape(reference_mask.height == reference.height && reference_mask.width == reference.width,
                  "color_fidelity: mask/reference size");
    const auto fg = foreground_pixels(generation);
    if (std::none_of(fg.begin(), fg.end(), [](std::uint8_t v) { return v != 0; })) return 0.0;
    const auto hg = color_histogram(generation, &fg);
    const auto hr = color_histogram(reference, &reference_mask.data);
    const double mg = std::accumulate(hg.begin(), hg.end(), 0.0) / 64.0;
    const double mr = std::accumulate(hr.begin(), hr.end(), 0.0) / 64.0;
    double num = 0, vg = 0, vr = 0;
    for (std::size_t i = 0; i < 64; ++i) {
        num += (hg[i] - mg) * (hr[i] - mr);
        vg += (hg[i] - mg) * (hg[i] - mg);
        vr += (hr[i] - mr) * (hr[i] - mr);
    }
    if (vg <= 0 || vr <= 0) return 0.0;
    return num / std::sqrt(vg * vr);
}

// ---- evaluation --------------------------------------------------------------------

std::string to_string(CompareTo c) { return c == CompareTo::Reference ? "reference" : "target"; }

CompareTo compare_to_from_string(const std::string& s) {
    if (s == "reference") return CompareTo::Reference;
    if (s == "target") return CompareTo::Target;
    throw ConfigError("compare_to must be 'reference' or 'target', got '" + s + "'");
}

bool MetricReport::too_many_missing(double max_fraction) const {
    return n_samples > 0 && static_cast<double>(missing.size()) > max_fraction * static_cast<double>(n_samples);
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json j{{"fid", fid},
                     {"fid_regularized", fid_regularized},
                     {"clip_i", clip_i},
                     {"dino_i", dino_i},
                     {"color_fidelity", color_fidelity},
                     {"n_samples", n_samples},
                     {"n_evaluated", n_evaluated},
                     {"n_missing", missing.size()},
                     {"missing", missing}};
    if (clip_t) j["clip_t"] = *clip_t;
    if (face_sim) j["face_sim"] = *face_sim;
    if (diversim_i) {
        j["diversim_i_mean"] = diversim_i->mean;
        j["diversim_i_std"] = diversim_i->std;
    }
    return j;
}

fs::path generation_path(const fs::path& dir, const std::string& sample_id) { return dir / (sample_id + ".ppm"); }

fs::path scenario_path(const fs::path& dir, const std::string& sample_id, const std::string& scenario, int k) {
    return dir / sample_id / (scenario + "_" + std::to_string(k) + ".ppm");
}

namespace {

struct SampleEval {
    bool present = false;
    std::vector<double> clip_gen, clip_cmp;
    double clip_i = 0, dino_i = 0, color = 0;
    std::optional<double> face;
    std::vector<double> clip_t;
    std::optional<double> diversim;
};

}  // namespace

MetricReport evaluate(const data::Manifest& manifest, const fs::path& generations_dir, const Embedders& emb,
                      const EvalConfig& cfg) {
    const int n = static_cast<int>(manifest.records.size());
    std::vector<SampleEval> per(static_cast<std::size_t>(n));

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        const auto& r = manifest.records[static_cast<std::size_t>(i)];
        const fs::path gp = generation_path(generations_dir, r.sample_id);
        if (!fs::exists(gp)) continue;
        SampleEval& s = per[static_cast<std::size_t>(i)];
        s.present = true;
        const ImageTensor gen = read_ppm(gp);
        const ImageTensor ref = read_ppm(manifest.resolve(r.ref_image_path));
        const SegMask mask = read_pgm(manifest.resolve(r.ref_mask_path));
        const ImageTensor cmp = cfg.compare_to == CompareTo::Reference ? ref : read_ppm(manifest.resolve(r.target_image_path));

        s.clip_gen = emb.clip_image.embed(gen);
        s.clip_cmp = emb.clip_image.embed(cmp);
        s.clip_i = similarity(s.clip_gen, s.clip_cmp);
        s.dino_i = pairwise_sim(emb.dino_image, gen, cmp);
        s.color = color_fidelity(gen, ref, mask);
        if (emb.face) s.face = pairwise_sim(*emb.face, gen, cmp);
        s.clip_t.push_back(similarity(emb.clip_text.embed(gen), emb.clip_text.embed_text(r.caption)));

        std::map<std::string, std::vector<std::vector<double>>> by_scenario;
        for (const auto& sc : cfg.prompts.scenarios)
            for (int k = 0; k < static_cast<int>(sc.suffixes.size()); ++k) {
                const fs::path p = scenario_path(generations_dir, r.sample_id, sc.name, k);
                if (!fs::exists(p)) continue;
                const ImageTensor img = read_ppm(p);
                by_scenario[sc.name].push_back(emb.dino_image.embed(img));
                const std::string prompt =
                    append_suffix(data::template_caption(r.class_word), sc.suffixes[static_cast<std::size_t>(k)]);
                s.clip_t.push_back(similarity(emb.clip_text.embed(img), emb.clip_text.embed_text(prompt)));
            }
        if (by_scenario.size() >= 2) s.diversim = diversim_from_embeddings(by_scenario, cfg.diversim_all_pairs).mean;
    }

    MetricReport rep;
    rep.n_samples = n;
    std::vector<Tensor> ga, gb;
    double clip_t_sum = 0;
    int clip_t_n = 0;
    std::vector<double> div;
    double face_sum = 0;
    for (int i = 0; i < n; ++i) {
        const auto& s = per[static_cast<std::size_t>(i)];
        if (!s.present) {
            rep.missing.push_back(manifest.records[static_cast<std::size_t>(i)].sample_id);
            continue;
        }
        ++rep.n_evaluated;
        rep.clip_i += s.clip_i;
        rep.dino_i += s.dino_i;
        rep.color_fidelity += s.color;
        if (s.face) face_sum += *s.face;
        for (double v : s.clip_t) {
            clip_t_sum += v;
            ++clip_t_n;
        }
        if (s.diversim) div.push_back(*s.diversim);
        ga.push_back(Tensor::row_vector(s.clip_gen));
        gb.push_back(Tensor::row_vector(s.clip_cmp));
    }
    if (rep.n_evaluated == 0) throw std::runtime_error("evaluate: no generations found in " + generations_dir.string());
    const double m = rep.n_evaluated;
    rep.clip_i /= m;
    rep.dino_i /= m;
    rep.color_fidelity /= m;
    if (emb.face) rep.face_sim = face_sum / m;
    if (clip_t_n > 0) rep.clip_t = clip_t_sum / clip_t_n;
    if (!div.empty()) {
        MeanStd d;
        d.mean = std::accumulate(div.begin(), div.end(), 0.0) / static_cast<double>(div.size());
        for (double v : div) d.std += (v - d.mean) * (v - d.mean);
        d.std = std::sqrt(d.std / static_cast<double>(div.size()));
        rep.diversim_i = d;
    }
    const auto f = fid(concat_rows(ga), concat_rows(gb));
    rep.fid = f.value;
    rep.fid_regularized = f.regularized;
    return rep;
}

}  // namespace objcustom::metrics
