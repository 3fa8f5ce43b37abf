#include "petlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "petlab/error.hpp"

namespace petlab {

SimilarityMatrix similarity_matrix(const Eigen::MatrixXd& image_emb,
                                   const Eigen::MatrixXd& text_emb,
                                   std::vector<int> caption_to_image) {
    if (image_emb.rows() == 0 || text_emb.rows() == 0)
        throw_input("similarity_matrix: empty embedding set");
    if (image_emb.cols() != text_emb.cols())
        throw_input("similarity_matrix: embedding width mismatch (" +
                    std::to_string(image_emb.cols()) + " vs " +
                    std::to_string(text_emb.cols()) + ")");
    if (static_cast<Eigen::Index>(caption_to_image.size()) != text_emb.rows())
        throw_input("similarity_matrix: caption_to_image size " +
                    std::to_string(caption_to_image.size()) + " != caption count " +
                    std::to_string(text_emb.rows()));
    for (std::size_t j = 0; j < caption_to_image.size(); ++j)
        if (caption_to_image[j] < 0 || caption_to_image[j] >= image_emb.rows())
            throw_input("similarity_matrix: caption " + std::to_string(j) +
                        " labels missing image " + std::to_string(caption_to_image[j]));

    SimilarityMatrix sim;
    sim.scores = image_emb * text_emb.transpose();
    sim.caption_to_image = std::move(caption_to_image);
    return sim;
}

namespace {

// Rank of candidate `cand` in its list: 1 + number of candidates that strictly
// beat it, where equal scores at a lower index also count as beating it.
int rank_in_row(const Eigen::MatrixXd& s, int row, int cand) {
    const double score = s(row, cand);
    int beaten_by = 0;
    for (int j = 0; j < s.cols(); ++j) {
        if (j == cand) continue;
        if (s(row, j) > score || (s(row, j) == score && j < cand)) ++beaten_by;
    }
    return beaten_by + 1;
}

int rank_in_col(const Eigen::MatrixXd& s, int col, int cand) {
    const double score = s(cand, col);
    int beaten_by = 0;
    for (int i = 0; i < s.rows(); ++i) {
        if (i == cand) continue;
        if (s(i, col) > score || (s(i, col) == score && i < cand)) ++beaten_by;
    }
    return beaten_by + 1;
}

} // namespace

double recall_at_k(const SimilarityMatrix& sim, int k, QueryDirection direction) {
    const int ni = sim.n_images();
    const int nt = sim.n_captions();
    if (static_cast<int>(sim.caption_to_image.size()) != nt)
        throw_input("recall_at_k: caption_to_image size mismatch");
    const int candidates = direction == QueryDirection::ImageQuery ? nt : ni;
    if (k < 1) throw_input("recall_at_k: k must be >= 1, got " + std::to_string(k));
    if (k > candidates)
        throw_input("recall_at_k: k=" + std::to_string(k) + " exceeds candidate count " +
                    std::to_string(candidates));

    int hits = 0;
    int queries = 0;
    if (direction == QueryDirection::ImageQuery) {
        queries = ni;
        for (int i = 0; i < ni; ++i) {
            int best = candidates + 1;
            for (int j = 0; j < nt; ++j)
                if (sim.caption_to_image[static_cast<std::size_t>(j)] == i)
                    best = std::min(best, rank_in_row(sim.scores, i, j));
            if (best <= k) ++hits;
        }
    } else {
        queries = nt;
        for (int j = 0; j < nt; ++j) {
            const int g = sim.caption_to_image[static_cast<std::size_t>(j)];
            if (rank_in_col(sim.scores, j, g) <= k) ++hits;
        }
    }
    return 100.0 * hits / queries;
}

double mean_recall(const std::vector<double>& recalls) {
    if (recalls.size() != 6)
        throw_input("mean_recall: expected 6 values, got " + std::to_string(recalls.size()));
    double sum = 0.0;
    for (double r : recalls) {
        if (!(r >= 0.0 && r <= 100.0))
            throw_input("mean_recall: value " + std::to_string(r) + " outside [0,100]");
        sum += r;
    }
    return sum / 6.0;
}

std::string MetricsRecord::csv_header() {
    return "tr_r1,tr_r5,tr_r10,ir_r1,ir_r5,ir_r10,mr,params_trainable,params_total";
}

std::string MetricsRecord::csv_row() const {
    std::ostringstream out;
    out.precision(4);
    out << std::fixed << tr_r1 << ',' << tr_r5 << ',' << tr_r10 << ',' << ir_r1 << ','
        << ir_r5 << ',' << ir_r10 << ',' << mr << ',' << params.trainable << ','
        << params.total;
    return out.str();
}

void RetrievalSplit::validate() const {
    if (images.empty() || captions.empty())
        throw_input("retrieval split is empty");
    if (captions.size() != caption_to_image.size())
        throw_input("retrieval split: " + std::to_string(captions.size()) + " captions but " +
                    std::to_string(caption_to_image.size()) + " labels");
    for (std::size_t j = 0; j < caption_to_image.size(); ++j)
        if (caption_to_image[j] < 0 ||
            caption_to_image[j] >= static_cast<int>(images.size()))
            throw_input("retrieval split: caption " + std::to_string(j) +
                        " labels missing image " + std::to_string(caption_to_image[j]));
}

MetricsRecord score_similarity(const SimilarityMatrix& sim, const petl::ParamReport& params) {
    auto clamped = [&](int k, QueryDirection dir) {
        const int cap = dir == QueryDirection::ImageQuery ? sim.n_captions() : sim.n_images();
        return recall_at_k(sim, std::min(k, cap), dir);
    };
    MetricsRecord rec;
    rec.tr_r1 = clamped(1, QueryDirection::ImageQuery);
    rec.tr_r5 = clamped(5, QueryDirection::ImageQuery);
    rec.tr_r10 = clamped(10, QueryDirection::ImageQuery);
    rec.ir_r1 = clamped(1, QueryDirection::TextQuery);
    rec.ir_r5 = clamped(5, QueryDirection::TextQuery);
    rec.ir_r10 = clamped(10, QueryDirection::TextQuery);
    rec.mr = mean_recall({rec.tr_r1, rec.tr_r5, rec.tr_r10, rec.ir_r1, rec.ir_r5, rec.ir_r10});
    rec.params = params;
    return rec;
}

MetricsRecord evaluate_retrieval(const DualEncoderModel& model, const RetrievalSplit& split) {
    split.validate();
    const int joint = model.config.joint_dim;
    Eigen::MatrixXd image_emb(static_cast<Eigen::Index>(split.images.size()), joint);
    for (std::size_t i = 0; i < split.images.size(); ++i)
        image_emb.row(static_cast<Eigen::Index>(i)) = encode_image(split.images[i], model).vector;
    Eigen::MatrixXd text_emb(static_cast<Eigen::Index>(split.captions.size()), joint);
    for (std::size_t j = 0; j < split.captions.size(); ++j)
        text_emb.row(static_cast<Eigen::Index>(j)) = encode_text(split.captions[j], model).vector;
    return score_similarity(similarity_matrix(image_emb, text_emb, split.caption_to_image),
                            petl::count_parameters(model));
}

MetricsRecord kfold_aggregate(const std::vector<MetricsRecord>& records) {
    if (records.empty()) throw_input("kfold_aggregate: no records");
    MetricsRecord mean;
    double trainable = 0.0, total = 0.0, reduction = 0.0;
    for (const MetricsRecord& r : records) {
        mean.tr_r1 += r.tr_r1;
        mean.tr_r5 += r.tr_r5;
        mean.tr_r10 += r.tr_r10;
        mean.ir_r1 += r.ir_r1;
        mean.ir_r5 += r.ir_r5;
        mean.ir_r10 += r.ir_r10;
        mean.mr += r.mr;
        trainable += static_cast<double>(r.params.trainable);
        total += static_cast<double>(r.params.total);
        reduction += r.params.reduction_pct;
    }
    const double n = static_cast<double>(records.size());
    mean.tr_r1 /= n;
    mean.tr_r5 /= n;
    mean.tr_r10 /= n;
    mean.ir_r1 /= n;
    mean.ir_r5 /= n;
    mean.ir_r10 /= n;
    mean.mr /= n;
    mean.params.trainable = std::llround(trainable / n);
    mean.params.total = std::llround(total / n);
    mean.params.reduction_pct = reduction / n;
    return mean;
}

namespace {

void check_chance_args(int n_images, int captions_per_image, int k) {
    if (n_images < 1) throw_input("chance recall: n_images must be >= 1");
    if (captions_per_image < 1) throw_input("chance recall: captions_per_image must be >= 1");
    if (k < 1) throw_input("chance recall: k must be >= 1");
}

} // namespace

double chance_recall_image_query(int n_images, int captions_per_image, int k) {
    check_chance_args(n_images, captions_per_image, k);
    const int n = n_images * captions_per_image;
    const int g = captions_per_image;
    if (k >= n) return 100.0;
    // P(at least one of g winners in a random k-subset) = 1 - C(n-g,k)/C(n,k).
    double miss = 1.0;
    for (int t = 0; t < k; ++t) miss *= static_cast<double>(n - g - t) / (n - t);
    return 100.0 * (1.0 - miss);
}

double chance_recall_text_query(int n_images, int k) {
    check_chance_args(n_images, 1, k);
    if (k >= n_images) return 100.0;
    return 100.0 * k / n_images;
}

double chance_mean_recall(int n_images, int captions_per_image) {
    std::vector<double> six;
    for (int k : {1, 5, 10}) six.push_back(chance_recall_image_query(n_images, captions_per_image, k));
    for (int k : {1, 5, 10}) six.push_back(chance_recall_text_query(n_images, k));
    return mean_recall(six);
}

} // namespace petlab
