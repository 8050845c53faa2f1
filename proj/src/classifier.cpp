#include "latentad/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace latentad::classifier {

namespace {

std::array<double, 2> softmax2(const nn::Tensor& logits) {
    if (logits.size() != 2) throw std::logic_error("classifier: expected 2 logits");
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

int label_index(phantom::CaseLabel l) { return l == phantom::CaseLabel::Healthy ? 0 : 1; }

}  // namespace

nn::ArchSpec classifier_spec(int channels, int base_channels, int levels, std::uint64_t seed) {
    nn::ArchSpec s;
    s.kind = nn::ArchKind::Classifier;
    s.in_channels = channels;
    s.out_channels = 2;
    s.base_channels = base_channels;
    s.levels = levels;
    s.time_conditioned = true;
    s.padding = nn::Padding::Zero;
    s.zero_init_output = true;
    s.init_seed = seed;
    return s;
}

double classify(nn::Network& clf, const nn::Tensor& z_t, int t,
                const diffusion::NoiseSchedule& s) {
    s.check_t(t);
    return softmax2(clf.forward(z_t, t))[0];
}

nn::Tensor input_gradient(nn::Network& clf, const nn::Tensor& z_t, int t,
                          phantom::CaseLabel target) {
    const auto p = softmax2(clf.forward(z_t, t));
    const int k = label_index(target);
    nn::Tensor g(nn::Shape{2, 1, 1, 1});
    for (int j = 0; j < 2; ++j) g[j] = static_cast<float>((j == k ? 1.0 : 0.0) - p[j]);
    nn::Tensor out = clf.backward(g);
    clf.zero_grad();
    return out;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auc: length mismatch");
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] ? pos : neg).push_back(scores[i]);
    if (pos.empty() || neg.empty()) throw std::invalid_argument("auc: needs both classes");
    std::sort(neg.begin(), neg.end());
    double wins = 0.0;
    for (double p : pos) {
        const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
        const auto hi = std::upper_bound(neg.begin(), neg.end(), p);
        wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
    }
    return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

std::vector<Example> balance(std::span<const Example> data, Rng& rng) {
    std::vector<std::size_t> healthy, sick;
    for (std::size_t i = 0; i < data.size(); ++i) {
        (data[i].label == phantom::CaseLabel::Healthy ? healthy : sick).push_back(i);
    }
    if (healthy.empty() || sick.empty()) {
        throw std::invalid_argument("classifier: dataset contains a single class");
    }
    auto& major = healthy.size() > sick.size() ? healthy : sick;
    const std::size_t keep = std::min(healthy.size(), sick.size());
    for (std::size_t i = major.size() - 1; i > 0; --i) {
        std::swap(major[i], major[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)))]);
    }
    major.resize(keep);
    std::vector<std::size_t> idx(healthy);
    idx.insert(idx.end(), sick.begin(), sick.end());
    std::sort(idx.begin(), idx.end());
    std::vector<Example> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(data[i]);
    return out;
}

TrainReport train_classifier(nn::Network& clf, std::span<const Example> train,
                             std::span<const Example> validation,
                             const diffusion::NoiseSchedule& schedule, int t_max,
                             const nn::TrainConfig& cfg) {
    cfg.validate();
    schedule.check_t(t_max);
    Rng rng(mix_seed(cfg.seed, 0xc1a5));
    const std::vector<Example> data = balance(train, rng);
    bool has_h = false, has_u = false;
    for (const auto& e : validation) (e.label == phantom::CaseLabel::Healthy ? has_h : has_u) = true;
    if (!has_h || !has_u) throw std::invalid_argument("classifier: validation needs both classes");

    auto noised = [&](const nn::Tensor& z, int t, Rng& r) {
        nn::Tensor eps(z.shape());
        for (auto& v : eps.data()) v = static_cast<float>(r.normal());
        return diffusion::q_sample(z, t, eps, schedule);
    };

    std::vector<nn::Tensor> val_inputs;
    std::vector<int> val_t, val_labels;
    Rng vrng(mix_seed(cfg.seed, 0x7a1));
    for (const auto& e : validation) {
        const int t = vrng.uniform_int(0, t_max);
        val_t.push_back(t);
        val_inputs.push_back(noised(e.latent, t, vrng));
        val_labels.push_back(label_index(e.label));
    }
    // AUC first; cross-entropy breaks ties, since AUC saturates long before calibration.
    auto validate = [&] {
        std::vector<double> scores;
        double loss = 0.0;
        for (std::size_t i = 0; i < val_inputs.size(); ++i) {
            const double p = classify(clf, val_inputs[i], val_t[i], schedule);
            scores.push_back(1.0 - p);
            loss -= std::log(std::max(val_labels[i] ? 1.0 - p : p, 1e-12));
        }
        return std::pair{auc(scores, val_labels), loss / static_cast<double>(val_inputs.size())};
    };

    TrainReport report;
    report.best_auc = -1.0;
    double best_loss = 0.0;
    std::vector<float> best = clf.flat_parameters();
    int since_best = 0;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)))]);
        }
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double inv_b = 1.0 / static_cast<double>(end - start);
            for (std::size_t j = start; j < end; ++j) {
                const Example& e = data[order[j]];
                const int t = rng.uniform_int(0, t_max);
                const auto p = softmax2(clf.forward(noised(e.latent, t, rng), t));
                const int k = label_index(e.label);
                loss_sum -= std::log(std::max(p[k], 1e-12));
                nn::Tensor g(nn::Shape{2, 1, 1, 1});
                for (int c = 0; c < 2; ++c) {
                    g[c] = static_cast<float>((p[c] - (c == k ? 1.0 : 0.0)) * inv_b);
                }
                clf.backward(g);
            }
            nn::adam_step(clf, cfg);
        }
        const auto [a, vloss] = validate();
        report.epochs.push_back({epoch, loss_sum / static_cast<double>(data.size()), a, vloss});
        if (a > report.best_auc || (a == report.best_auc && vloss < best_loss)) {
            report.best_auc = a;
            best_loss = vloss;
            report.best_epoch = epoch;
            best = clf.flat_parameters();
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            report.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    if (report.epochs.empty()) report.best_auc = validate().first;
    clf.set_flat_parameters(best);
    return report;
}

void write_report_csv(const std::filesystem::path& path, const TrainReport& report) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "epoch,loss,val_auc,val_loss\n";
    for (const auto& e : report.epochs) {
        os << e.epoch << ',' << e.loss << ',' << e.val_auc << ',' << e.val_loss << '\n';
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace latentad::classifier
