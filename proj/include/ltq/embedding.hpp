#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ltq/annotations.hpp"
#include "ltq/datamodel.hpp"

namespace ltq {

// Token range of a document handed to the encoder in one pass.
struct Window {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive
    std::size_t index = 0;

    std::size_t size() const { return end - begin; }
};

// Covers all tokens with fixed-size windows of `budget` tokens; consecutive
// windows overlap by min(100, budget / 4) so short spans are never split
// across every window that sees them.
std::vector<Window> slide_windows(std::size_t token_count, std::size_t budget);

// One row of an encoder group: a document window (optional for example rows
// that only carry table values) plus the linearized table segment.
struct RowContext {
    const Document* doc = nullptr;
    Window window;
    LinearizedSequence table_segment;

    std::size_t token_budget_used() const {
        return window.size() + 1 + table_segment.token_count();  // +1 for [SEP]
    }
};

// Per-row encoder outputs, row-major [n][dim] / [m][dim].
struct RowEmbeddings {
    std::size_t n = 0;  // text tokens in the window
    std::size_t m = 0;  // cells (one per linearized segment)
    std::vector<float> ve;     // value-extraction token embeddings
    std::vector<float> dd;     // duplicate-detection token embeddings
    std::vector<float> cells;  // cell embeddings

    std::span<const float> ve_token(std::size_t i, std::size_t dim) const {
        return {ve.data() + i * dim, dim};
    }
    std::span<const float> dd_token(std::size_t i, std::size_t dim) const {
        return {dd.data() + i * dim, dim};
    }
    std::span<const float> cell(std::size_t j, std::size_t dim) const {
        return {cells.data() + j * dim, dim};
    }
};

struct EncoderOutput {
    int dim = 0;
    std::vector<RowEmbeddings> rows;
};

// Mean of the token embeddings belonging to one cell. `token_embeds` is
// row-major [n][dim]; `cell_token_ranges` gives [begin, end) token index
// pairs, one per cell.
std::vector<float> cell_pool(std::span<const float> token_embeds, std::size_t dim,
                             const std::vector<std::pair<std::size_t, std::size_t>>& cell_token_ranges);

// Column-wise mean over the k rows of a group; with k=1 this is the masked
// cell embedding itself.
std::vector<float> attribute_pool(const EncoderOutput& out, std::size_t column);

struct VerticalAttentionWeights {
    int dim = 0;
    int heads = 1;
    int layers = 1;
    std::vector<float> w_q, w_k, w_v, w_o;  // each dim x dim, row-major

    static VerticalAttentionWeights identity(int dim, int heads = 1);
    void validate() const;
};

// Softmax self-attention across the k rows of each column; output shape
// equals input shape. cells is row-major [k][m][dim].
std::vector<float> vertical_attention(std::span<const float> cells, std::size_t k, std::size_t m,
                                      const VerticalAttentionWeights& weights);

class Encoder {
public:
    virtual ~Encoder() = default;
    virtual int dim() const = 0;
    virtual std::string name() const = 0;
    virtual std::size_t context_length() const { return 512; }

    // Encode a group of k row contexts; output row i corresponds to input i.
    // Callers must window documents so every row fits the context length.
    virtual EncoderOutput encode(std::span<const RowContext> group) const = 0;

    // Fast path for embedding a standalone query value ("<attr> is <value>").
    // Returns nullopt when the encoder has no shortcut; callers then build
    // the synthetic document themselves.
    virtual std::optional<std::vector<float>> lookup_value_embedding(
        std::string_view attr, std::string_view value) const {
        (void)attr;
        (void)value;
        return std::nullopt;
    }

    void check_budget(std::span<const RowContext> group) const;
};

// Replays gold annotations as embeddings: concept c owns coordinates 2c
// (begin-variant) and 2c+1 (inside-variant); gold value tokens carry their
// concept's variant vector, masked cells the summed variants of the concepts
// they should extract, and DD token embeddings the begin coordinate alone so
// synonym spans land on one vector. Decoder heads with the matching diagonal
// weights reproduce the annotations exactly.
class OracleEncoder : public Encoder {
public:
    OracleEncoder(const Catalog& catalog, std::vector<const CollectionAnnotation*> annotations);

    int dim() const override { return dim_; }
    std::string name() const override { return "oracle"; }
    EncoderOutput encode(std::span<const RowContext> group) const override;
    std::optional<std::vector<float>> lookup_value_embedding(std::string_view attr,
                                                             std::string_view value) const override;

    const ConceptTable& concepts() const { return concepts_; }

private:
    struct TokenMark {
        int concept_id = -1;
        bool begin = false;
    };
    struct RowInfo {
        std::vector<std::string> key_alternatives;          // normalized
        std::map<std::string, std::vector<int>> concepts;   // attr -> concept ids
    };
    struct DocInfo {
        std::vector<TokenMark> marks;  // one per token
        std::vector<RowInfo> rows;
        std::string key_attr;  // empty for single-row tables
    };

    const DocInfo* doc_info(std::string_view path) const;
    void embed_row(const RowContext& ctx, RowEmbeddings& out) const;

    ConceptTable concepts_;
    std::map<std::string, DocInfo, std::less<>> docs_;
    int dim_ = 0;
};

// Deterministic feature-hash encoder for performance and smoke tests; never
// used for accuracy checks. Applies the supplied vertical-attention weights
// across row groups, identity projections by default.
class HashEncoder : public Encoder {
public:
    explicit HashEncoder(int dim = 64)
        : dim_(dim), vertical_(VerticalAttentionWeights::identity(dim)) {}
    HashEncoder(int dim, VerticalAttentionWeights vertical)
        : dim_(dim), vertical_(std::move(vertical)) {
        vertical_.validate();
        if (vertical_.dim != dim) {
            throw ValidationError("vertical attention dim does not match encoder dim");
        }
    }

    int dim() const override { return dim_; }
    std::string name() const override { return "hash"; }
    EncoderOutput encode(std::span<const RowContext> group) const override;

private:
    std::vector<float> hash_vec(std::string_view s, std::uint64_t salt) const;
    int dim_;
    VerticalAttentionWeights vertical_;
};

// Precomputed-embedding file: a JSON manifest next to a binary block file
// (header {dim:u32, block count:u32} then row-major little-endian f32).
// Blocks are keyed by (doc path, window range, linearization fingerprint).
struct EmbeddingStore {
    int dim = 0;
    struct Key {
        std::string doc;
        std::size_t win_begin = 0;
        std::size_t win_end = 0;
        std::uint64_t ctx = 0;
        auto operator<=>(const Key&) const = default;
    };
    std::map<Key, EncoderOutput> groups;
    std::map<std::string, std::vector<float>> values;  // "attr\x1fvalue" -> embedding

    void save(const std::string& base_path) const;  // writes base.json + base.bin
    static EmbeddingStore load(const std::string& base_path);
};

// Wraps another encoder and records every group it encodes, so externally
// produced embeddings can later drive the engine through ReplayEncoder.
class RecordingEncoder : public Encoder {
public:
    RecordingEncoder(const Encoder& inner, EmbeddingStore& store)
        : inner_(inner), store_(store) {
        store_.dim = inner.dim();
    }

    int dim() const override { return inner_.dim(); }
    std::string name() const override { return inner_.name(); }
    std::size_t context_length() const override { return inner_.context_length(); }
    EncoderOutput encode(std::span<const RowContext> group) const override;
    std::optional<std::vector<float>> lookup_value_embedding(std::string_view attr,
                                                             std::string_view value) const override;

private:
    const Encoder& inner_;
    EmbeddingStore& store_;
};

class ReplayEncoder : public Encoder {
public:
    explicit ReplayEncoder(EmbeddingStore store) : store_(std::move(store)) {}

    int dim() const override { return store_.dim; }
    std::string name() const override { return "replay"; }
    EncoderOutput encode(std::span<const RowContext> group) const override;
    std::optional<std::vector<float>> lookup_value_embedding(std::string_view attr,
                                                             std::string_view value) const override;

private:
    EmbeddingStore store_;
};

}  // namespace ltq
