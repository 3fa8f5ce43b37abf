#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "petlab/encoder.hpp"
#include "petlab/petl.hpp"

namespace petlab {

// Rows are image embeddings, columns caption embeddings; caption_to_image[j]
// names the row that owns caption j.
struct SimilarityMatrix {
    Eigen::MatrixXd scores;
    std::vector<int> caption_to_image;

    int n_images() const { return static_cast<int>(scores.rows()); }
    int n_captions() const { return static_cast<int>(scores.cols()); }
};

SimilarityMatrix similarity_matrix(const Eigen::MatrixXd& image_emb,
                                   const Eigen::MatrixXd& text_emb,
                                   std::vector<int> caption_to_image);

enum class QueryDirection {
    ImageQuery, // image retrieves captions ("text retrieval")
    TextQuery,  // caption retrieves images ("image retrieval")
};

// Percentage of queries whose ground truth appears in the top-k candidates.
// An image query succeeds when any of its captions makes the cut. Ties rank
// the lower index first. k must lie in [1, candidate count].
double recall_at_k(const SimilarityMatrix& sim, int k, QueryDirection direction);

// Arithmetic mean of exactly six recall percentages.
double mean_recall(const std::vector<double>& recalls);

struct MetricsRecord {
    double tr_r1 = 0.0; // image query, caption candidates
    double tr_r5 = 0.0;
    double tr_r10 = 0.0;
    double ir_r1 = 0.0; // caption query, image candidates
    double ir_r5 = 0.0;
    double ir_r10 = 0.0;
    double mr = 0.0;
    petl::ParamReport params;

    static std::string csv_header();
    std::string csv_row() const;
};

// Everything evaluate_retrieval needs from a dataset split: decoded images,
// tokenized captions, and the caption -> image assignment.
struct RetrievalSplit {
    std::vector<ImageTensor> images;
    std::vector<std::vector<int>> captions;
    std::vector<int> caption_to_image;

    std::size_t n_pairs() const { return captions.size(); }
    void validate() const;
};

// Builds a MetricsRecord from six recalls plus a parameter report; k values
// larger than the candidate pool are clamped so tiny splits stay evaluable.
MetricsRecord score_similarity(const SimilarityMatrix& sim, const petl::ParamReport& params);

// Deterministic evaluation pass: no augmentation, no gradients.
MetricsRecord evaluate_retrieval(const DualEncoderModel& model, const RetrievalSplit& split);

// Elementwise mean over per-fold records.
MetricsRecord kfold_aggregate(const std::vector<MetricsRecord>& records);

// Expected recall of a uniformly random ranking. An image query holds
// captions_per_image winning tickets out of n_images * captions_per_image;
// a caption query holds one out of n_images.
double chance_recall_image_query(int n_images, int captions_per_image, int k);
double chance_recall_text_query(int n_images, int k);
double chance_mean_recall(int n_images, int captions_per_image);

} // namespace petlab
