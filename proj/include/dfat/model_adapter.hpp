#pragma once

// Backbone abstraction: a decoder that maps a (patch prefix + token) sequence
// to per-layer hidden states, plus the bundled tiny reference decoder.

#include "dfat/autograd.hpp"
#include "dfat/corpus.hpp"
#include "dfat/io.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dfat::model {

using ad::Matrix;

enum class ModalityFusion { prefix_patches, none };
enum class TrainableScope { full, adapters_only, projections_only };
enum class Branch { image, text };

std::string_view to_string(ModalityFusion v);
std::string_view to_string(TrainableScope v);
std::string_view to_string(Branch v);
ModalityFusion parse_modality_fusion(std::string_view s);
TrainableScope parse_trainable_scope(std::string_view s);

struct BackboneSpec {
    int vocab_size = 64;
    int hidden_dim = 32;
    int num_layers = 2;
    int max_seq_len = 128;
    ModalityFusion modality_fusion = ModalityFusion::prefix_patches;
    TrainableScope trainable_scope = TrainableScope::full;
    // Shape of the image patch grid fed as a sequence prefix.
    int num_patches = 8;
    int patch_dim = 16;
    // 0 selects 4 * hidden_dim.
    int ffn_dim = 0;

    int resolved_ffn_dim() const { return ffn_dim > 0 ? ffn_dim : 4 * hidden_dim; }
    int penultimate_layer() const { return num_layers - 1; }
    void validate() const;

    void write(io::KeyValues& kv, const std::string& prefix = "model.") const;
    // Missing keys keep their current values.
    void read(const io::KeyValues& kv, const std::string& prefix = "model.");
};

// Fresh vocabulary entries appended after the base vocabulary.
struct SpecialTokenPlan {
    std::vector<int> image_tokens;
    std::vector<int> text_tokens;

    static SpecialTokenPlan make(int base_vocab, int image_count, int text_count);

    int image_count() const { return static_cast<int>(image_tokens.size()); }
    int text_count() const { return static_cast<int>(text_tokens.size()); }
    int total() const { return image_count() + text_count(); }
    std::span<const int> tokens(Branch b) const { return b == Branch::image ? image_tokens : text_tokens; }
    bool is_special(int id) const;
    void validate(int base_vocab) const;
};

struct AugmentedPrompt {
    std::vector<int> tokens;
    std::vector<int> special_positions;
};

// Appends the branch's special tokens to the prompt, in index order.
AugmentedPrompt augment_prompt(std::span<const int> prompt, const SpecialTokenPlan& plan, Branch branch, int max_seq_len);

// One element of a forward batch, already augmented.
struct SequenceInput {
    Branch branch = Branch::text;
    Matrix patches;                      // num_patches x patch_dim, or empty
    std::vector<int> tokens;             // content + prompt + special tokens
    std::vector<int> special_positions;  // absolute positions (patch prefix included)

    int length() const { return static_cast<int>(patches.rows()) + static_cast<int>(tokens.size()); }
    std::vector<int> ordinary_positions() const;
};

struct HiddenStateView {
    int layer_index = 0;
    int length = 0;  // non-padding rows
    Matrix states;   // padded_len x hidden_dim, padding rows are zero
    std::vector<int> special_positions;
    std::vector<int> ordinary_positions;
};

class Backbone {
public:
    virtual ~Backbone() = default;

    virtual const BackboneSpec& spec() const = 0;
    virtual const SpecialTokenPlan& token_plan() const = 0;

    // Hidden states (length x hidden_dim) after `layer_index` blocks
    // (0 = embeddings), recorded on the tape.
    virtual ad::Var forward(ad::Tape& tape, const SequenceInput& input, int layer_index) = 0;

    virtual std::vector<ad::Parameter*> parameters() = 0;
    virtual std::unique_ptr<Backbone> clone() const = 0;

    // Digest of the architecture and every parameter value.
    std::string fingerprint();

    // Full-scale backbones may describe categories themselves.
    virtual bool supports_generation() const { return false; }
    virtual std::string generate(std::string_view prompt);
};

// Decoder-only transformer: pre-LN blocks, single-head causal attention with
// rotary positions, GELU MLP. Patch features enter through a linear map as a
// sequence prefix.
class TinyDecoder final : public Backbone {
public:
    TinyDecoder(BackboneSpec spec, SpecialTokenPlan plan, std::uint64_t seed);

    const BackboneSpec& spec() const override { return spec_; }
    const SpecialTokenPlan& token_plan() const override { return plan_; }
    ad::Var forward(ad::Tape& tape, const SequenceInput& input, int layer_index) override;
    std::vector<ad::Parameter*> parameters() override;
    std::unique_ptr<Backbone> clone() const override { return std::make_unique<TinyDecoder>(*this); }

    std::uint64_t seed() const { return seed_; }
    ad::Parameter& parameter(const std::string& name);

    void save(const std::filesystem::path& dir) const;
    static std::unique_ptr<TinyDecoder> load(const std::filesystem::path& dir);

private:
    void validate_input(const SequenceInput& input) const;
    void apply_scope();

    BackboneSpec spec_;
    SpecialTokenPlan plan_;
    std::uint64_t seed_;
    std::vector<ad::Parameter> params_;
};

std::unique_ptr<TinyDecoder> build_reference_model(const BackboneSpec& spec, const SpecialTokenPlan& plan, std::uint64_t seed);

// Runs every element without gradient tracking. Elements are right-padded
// to the longest length; padding is excluded from both position sets.
std::vector<HiddenStateView> forward_hidden(Backbone& backbone, std::span<const SequenceInput> batch, int layer_index);

// Assembles branch sequences: image = [patches] + image prompt + <ImgCls..>,
// text = content + text prompt + <TxtCls..>.
class InputComposer {
public:
    InputComposer(const BackboneSpec& spec, SpecialTokenPlan plan, std::vector<int> image_prompt, std::vector<int> text_prompt);

    SequenceInput image(const Matrix& patches) const;
    // Content that does not fit is cut from the end; `truncated` reports it.
    SequenceInput text(std::span<const int> content, bool* truncated = nullptr) const;

    const SpecialTokenPlan& plan() const { return plan_; }
    const std::vector<int>& image_prompt() const { return image_prompt_; }
    const std::vector<int>& text_prompt() const { return text_prompt_; }

private:
    BackboneSpec spec_;
    SpecialTokenPlan plan_;
    std::vector<int> image_prompt_;
    std::vector<int> text_prompt_;
};

// Description text for a category: corpus lookup when a corpus is supplied,
// otherwise live generation from a capable backbone.
std::string describe_category(const std::string& category_name, const std::string& knowledge_prompt,
                              Backbone* backbone, const knowledge::CategoryCorpus* corpus);

}  // namespace dfat::model
