#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ltq/datamodel.hpp"

namespace ltq {

struct ChatConfig {
    std::string base_url;  // e.g. http://localhost:8080
    std::string model;
    std::string api_key;
    int timeout_seconds = 60;

    // LTQ_LLM_BASE_URL / LTQ_LLM_MODEL / LTQ_LLM_API_KEY
    static std::optional<ChatConfig> from_environment();
};

// Minimal chat-completion client: POST {base_url}/v1/chat/completions with a
// single user message, returns the first choice's content.
class ChatClient {
public:
    explicit ChatClient(ChatConfig config) : config_(std::move(config)) {}
    virtual ~ChatClient() = default;

    virtual std::string complete(const std::string& prompt) const;

private:
    ChatConfig config_;
};

struct SchemaSuggestion {
    std::string document_level_key;
    TableKind kind = TableKind::single_row;
};

std::string key_prompt(const std::vector<std::string>& attr_names,
                       const std::vector<std::string>& sample_texts);
std::string kind_prompt(const std::vector<std::string>& attr_names,
                        const std::vector<std::string>& sample_texts);

// Asks the endpoint which column acts as the document-level key and whether
// each text contributes one or many rows. Answers are parsed verbatim; the
// caller confirms before registering anything.
SchemaSuggestion suggest_registration(const std::vector<std::string>& sample_texts,
                                      const std::vector<std::string>& attr_names,
                                      const ChatClient& client);

}  // namespace ltq
