#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ltq/embedding.hpp"

namespace ltq {

// Bilinear matrices and thresholds for the row-detect, attribute-detect and
// duplicate-detect heads. Matrices are row-major f32.
struct HeadWeights {
    int dim = 0;
    int span_dim = 0;
    std::vector<float> w_i_rd, w_b_rd;  // dim x dim
    std::vector<float> w_i_ad, w_b_ad;  // dim x dim
    std::vector<float> w_dd;            // span_dim x span_dim
    float thresh_rd = 0.0f;
    float thresh_ad = 0.0f;
    float thresh_dd = 0.0f;
    VerticalAttentionWeights vertical;  // optional; identity when absent

    void validate() const;
    std::uint64_t fingerprint() const;

    // Diagonal weights matching OracleEncoder's coordinate layout: W_B selects
    // even coordinates, W_I odd ones, W_DD is the identity. Thresholds sit
    // below 1/k for every group size the engine uses (k <= 3).
    static HeadWeights oracle(int dim);

    static HeadWeights load(const std::string& path);
    void save(const std::string& path) const;
};

enum class IobTag : std::uint8_t { I, O, B };

// argmax over {B: w^T W_B c, I: w^T W_I c, O: thresh}; exact ties resolve
// with priority O > B > I.
std::vector<IobTag> tag_tokens(const RowEmbeddings& row, std::size_t dim,
                               std::span<const float> cell_embed, const std::vector<float>& w_i,
                               const std::vector<float>& w_b, float thresh);

// Maximal runs starting at B followed by consecutive I become spans; an I
// with no open span starts a new one. Token indices are window-local and are
// shifted by `window_begin` into document coordinates.
std::vector<Span> iob_decode(std::span<const IobTag> tags, const Document& doc,
                             std::size_t window_begin);

std::vector<Span> row_detect(const RowEmbeddings& row, const HeadWeights& weights,
                             std::size_t cell_index, const Document& doc,
                             std::size_t window_begin);

std::vector<Span> attribute_detect(const RowEmbeddings& row, const HeadWeights& weights,
                                   std::span<const float> attribute_embed, const Document& doc,
                                   std::size_t window_begin);

// Mean of the first and last token DD embeddings of the span.
std::vector<float> span_embed(const Span& span, const RowEmbeddings& row, std::size_t dim,
                              std::size_t window_begin);

struct ScoredSpan {
    Span span;
    std::vector<float> embed;
};

struct ClusterResult {
    std::vector<std::vector<std::size_t>> clusters;  // indices into the input
    std::vector<std::size_t> representatives;        // longest span per cluster
};

// Average-linkage agglomerative clustering on a symmetric distance matrix;
// clusters merge while the smallest linkage distance is < 0.
std::vector<std::vector<std::size_t>> cluster_by_distance(
    const std::vector<std::vector<double>>& dist);

// similarity(a, b) = mean of both bilinear orders of v_a^T W_dd v_b, minus
// thresh_dd; distance is its negation. Input spans must be sorted by
// (token_start, token_end); representatives are the longest span per cluster,
// ties to the earliest.
ClusterResult duplicate_detect(const std::vector<ScoredSpan>& spans, const HeadWeights& weights);

double dd_similarity(std::span<const float> a, std::span<const float> b,
                     const HeadWeights& weights);

struct LossConfig {
    double alpha = 300.0;
    double beta = 80.0;
    double gamma = 1.0;
    double delta = 1.0;
    double l_mlm = 0.0;  // supplied externally; no MLM head here
};

struct LossBreakdown {
    double l_mcr = 0.0;
    double l_ata = 0.0;
    double l_dd = 0.0;
    double l_mlm = 0.0;
    double combined = 0.0;
};

// Gold labels aligned to one encoded group.
struct GroupLabels {
    struct DdSpan {
        std::size_t token_start = 0;
        std::size_t token_end = 0;  // window-local, exclusive
        int group = 0;              // spans in the same group are duplicates
    };
    struct RowLabels {
        // cell index -> gold I-O-B tag per window token (masked cells only)
        std::map<std::size_t, std::vector<IobTag>> rd_tags;
        // per column j, gold tags for attribute detection over all tokens
        std::vector<std::vector<IobTag>> ad_tags;
        std::vector<DdSpan> dd_spans;
    };
    std::vector<RowLabels> rows;
};

// Forward computation of the multi-task pre-training loss: mean token-level
// cross-entropy over {I,O,B} for the RD and AD heads, mean pairwise
// cross-entropy over {duplicate, distinct} for the DD head, combined as
// alpha*l_mcr + beta*l_ata + gamma*l_dd + delta*l_mlm.
LossBreakdown pretrain_loss_forward(const EncoderOutput& output, const GroupLabels& labels,
                                    const HeadWeights& weights, const LossConfig& config = {});

}  // namespace ltq
