#pragma once

#include <vector>

#include "melsyn/autodiff.hpp"
#include "melsyn/codecs.hpp"

namespace melsyn {

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 sqrtm(S1^1/2 S2 S1^1/2)), clamped at 0.
double frechet_distance(const Eigen::MatrixXd& real_feats, const Eigen::MatrixXd& gen_feats);

/// Mean over paired rows of KL(real || gen), 1e-10 floor inside the log.
double label_kl(const Eigen::MatrixXd& real_dists, const Eigen::MatrixXd& gen_dists);

struct ImsmResult {
  Eigen::MatrixXd matrix;  // images x music, row-stochastic
  double score = 0.0;      // mean of the diagonal
};

/// Both inputs are raw cosine matrices with texts on the columns: a_clip is
/// images x texts, a_clap is music x texts. The result is
/// softmax_rows(s * a_clip) * softmax_rows(s * a_clap^T). Sums are taken over
/// sorted terms so a shared relabeling of items leaves the score unchanged.
ImsmResult imsm(const Eigen::MatrixXd& a_clip, const Eigen::MatrixXd& a_clap, double sharpness = 10.0);

/// Symmetric InfoNCE over row-normalized embeddings.
double itc_loss(const Eigen::MatrixXd& z_img, const Eigen::MatrixXd& z_txt, double tau);
template <typename Scalar>
ad::Var<Scalar> itc_loss(const ad::Var<Scalar>& z_img, const ad::Var<Scalar>& z_txt, Scalar tau);

/// Rows scaled to unit L2 norm.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m);
Eigen::MatrixXd cosine_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// ---- Toy feature extractor, classifier and embedders

/// 16 triangular mel bands over the magnitude bins; per band the mean and
/// standard deviation over frames of log(1 + energy). 32 values.
Eigen::VectorXd toy_extract(const Spectrogram& s);
Eigen::MatrixXd toy_extract_all(const std::vector<Spectrogram>& specs);

/// Affine standardization fitted on training rows.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& x);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};

/// Softmax regression on standardized features.
struct ToyClassifier {
  Standardizer standardizer;
  Eigen::MatrixXd weight;  // d x K
  Eigen::RowVectorXd bias;

  Eigen::MatrixXd logits(const Eigen::MatrixXd& features) const;
  Eigen::MatrixXd probabilities(const Eigen::MatrixXd& features) const;
  double accuracy(const Eigen::MatrixXd& features, const std::vector<int>& labels) const;  // labels 0-based
};

ToyClassifier train_toy_classifier(const Eigen::MatrixXd& features, const std::vector<int>& labels, int classes,
                                   int iterations = 500, double lr = 0.05, std::uint64_t seed = 1);

/// Linear maps into a shared space followed by row normalization.
struct ToyEmbedders {
  Standardizer image_std, text_std, music_std;
  Eigen::MatrixXd image_w, text_w, music_w;

  Eigen::MatrixXd embed_image(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd embed_text(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd embed_music(const Eigen::MatrixXd& x) const;
};

struct EmbedderTraining {
  Index dim = 16;
  double tau = 0.1;
  int iterations = 300;
  double lr = 0.01;
  std::uint64_t seed = 1;
};

/// Image and text maps trained jointly with itc_loss, then the text map is
/// frozen and the music map trained against it.
ToyEmbedders train_toy_embedders(const Eigen::MatrixXd& images, const Eigen::MatrixXd& texts,
                                 const Eigen::MatrixXd& music, const EmbedderTraining& options);

}  // namespace melsyn
