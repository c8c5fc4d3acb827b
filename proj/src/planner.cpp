#include "ltq/planner.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

#include "json.hpp"

namespace ltq {

using nlohmann::json;

PlanPtr PlanNode::clone() const {
    auto copy = std::make_unique<PlanNode>();
    copy->op = op;
    copy->name = name;
    copy->attrs = attrs;
    copy->keys = keys;
    copy->cond = cond;
    copy->agg = agg;
    copy->agg_attr = agg_attr;
    for (const auto& child : children) copy->children.push_back(child->clone());
    return copy;
}

std::string to_string(PlanNode::Op op) {
    switch (op) {
        case PlanNode::Op::TableRef: return "TableRef";
        case PlanNode::Op::LatentRef: return "LatentRef";
        case PlanNode::Op::MMScan: return "MMScan";
        case PlanNode::Op::MMJoin: return "MMJoin";
        case PlanNode::Op::MMUnion: return "MMUnion";
        case PlanNode::Op::MMProject: return "MMProject";
        case PlanNode::Op::MMSelectLatent: return "MMSelectLatent";
        case PlanNode::Op::MMSelectTable: return "MMSelectTable";
        case PlanNode::Op::MMAggregate: return "MMAggregate";
        case PlanNode::Op::Join: return "Join";
        case PlanNode::Op::Union: return "Union";
        case PlanNode::Op::Project: return "Project";
        case PlanNode::Op::Select: return "Select";
        case PlanNode::Op::Aggregate: return "Aggregate";
    }
    return "?";
}

std::string PlanNode::render() const {
    if (op == Op::TableRef || op == Op::LatentRef) return name;
    std::ostringstream out;
    out << to_string(op);
    if (op == Op::Project || op == Op::MMProject) {
        out << "[";
        for (std::size_t i = 0; i < attrs.size(); ++i) out << (i ? "," : "") << attrs[i];
        out << "]";
    } else if (op == Op::Join || op == Op::MMJoin) {
        if (!keys.empty()) {
            out << "[";
            for (std::size_t i = 0; i < keys.size(); ++i) out << (i ? "," : "") << keys[i];
            out << "]";
        }
    } else if (cond) {
        out << "[" << cond->attr << "=" << cond->value << "]";
    } else if (op == Op::Aggregate || op == Op::MMAggregate) {
        out << "[" << (agg == AggFunc::list ? "list" : "count") << "," << agg_attr << "]";
    }
    out << "(";
    for (std::size_t i = 0; i < children.size(); ++i) {
        out << (i ? ", " : "") << children[i]->render();
    }
    out << ")";
    return out.str();
}

std::vector<std::string> PlanType::latent_attr_names() const {
    std::vector<std::string> names;
    for (std::size_t idx : latent_attrs) names.push_back(schema->latent_attributes[idx].name);
    return names;
}

namespace {

void expect_children(const PlanNode& node, std::size_t count) {
    if (node.children.size() != count) {
        throw ValidationError(to_string(node.op) + " expects " + std::to_string(count) +
                              " input(s), got " + std::to_string(node.children.size()));
    }
}

PlanType table_type(std::vector<Attribute> attrs, std::set<std::string> extracted = {}) {
    PlanType t;
    t.attrs = std::move(attrs);
    t.extracted = std::move(extracted);
    return t;
}

}  // namespace

PlanType type_check(const PlanNode& node, const PlanEnv& env) {
    switch (node.op) {
        case PlanNode::Op::TableRef: {
            expect_children(node, 0);
            return table_type(env.catalog.table(node.name).attributes());
        }
        case PlanNode::Op::LatentRef: {
            expect_children(node, 0);
            PlanType t;
            t.is_latent = true;
            t.schema = &env.catalog.latent(node.name);
            for (std::size_t i = 0; i < t.schema->latent_attributes.size(); ++i) {
                t.latent_attrs.push_back(i);
            }
            return t;
        }
        case PlanNode::Op::MMProject: {
            expect_children(node, 1);
            PlanType child = type_check(*node.children[0], env);
            if (!child.is_latent) {
                throw ValidationError("MMProject requires a latent table input");
            }
            PlanType t = child;
            t.latent_attrs.clear();
            for (const auto& name : node.attrs) {
                auto idx = child.schema->attr_index(name);
                if (!idx || std::find(child.latent_attrs.begin(), child.latent_attrs.end(),
                                      *idx) == child.latent_attrs.end()) {
                    throw ValidationError("unknown latent attribute '" + name + "' in MMProject");
                }
                t.latent_attrs.push_back(*idx);
            }
            if (child.schema->kind == TableKind::multi_row &&
                std::find(node.attrs.begin(), node.attrs.end(),
                          *child.schema->document_level_key) == node.attrs.end()) {
                throw ValidationError("MMProject on a multi_row latent table must keep the key");
            }
            return t;
        }
        case PlanNode::Op::MMSelectLatent: {
            expect_children(node, 1);
            PlanType child = type_check(*node.children[0], env);
            if (!child.is_latent) {
                throw ValidationError("MMSelectLatent requires a latent table input");
            }
            if (!node.cond || !child.schema->attr_index(node.cond->attr)) {
                throw ValidationError("MMSelectLatent condition attribute is not latent");
            }
            return child;
        }
        case PlanNode::Op::MMScan: {
            expect_children(node, 1);
            PlanType child = type_check(*node.children[0], env);
            if (!child.is_latent) throw ValidationError("MMScan requires a latent table input");
            PlanType t;
            std::set<std::string> extracted;
            for (std::size_t idx : child.latent_attrs) {
                t.attrs.push_back(child.schema->latent_attributes[idx]);
                extracted.insert(child.schema->latent_attributes[idx].name);
            }
            t.attrs.push_back(Attribute{"path", AttrType::path});
            t.extracted = std::move(extracted);
            return t;
        }
        case PlanNode::Op::MMJoin: {
            expect_children(node, 2);
            PlanType left = type_check(*node.children[0], env);
            PlanType right = type_check(*node.children[1], env);
            if (left.is_latent || !right.is_latent) {
                throw ValidationError("MMJoin takes a table on the left and a latent table on "
                                      "the right");
            }
            PlanType t = table_type(left.attrs, left.extracted);
            for (std::size_t idx : right.latent_attrs) {
                const Attribute& a = right.schema->latent_attributes[idx];
                if (std::find(node.keys.begin(), node.keys.end(), a.name) != node.keys.end()) {
                    continue;
                }
                t.attrs.push_back(a);
                t.extracted.insert(a.name);
            }
            return t;
        }
        case PlanNode::Op::MMUnion: {
            expect_children(node, 2);
            PlanType left = type_check(*node.children[0], env);
            PlanType right = type_check(*node.children[1], env);
            if (left.is_latent || !right.is_latent) {
                throw ValidationError("MMUnion takes a table on the left and a latent table on "
                                      "the right");
            }
            PlanType t = table_type(left.attrs, left.extracted);
            for (std::size_t idx : right.latent_attrs) {
                t.extracted.insert(right.schema->latent_attributes[idx].name);
            }
            return t;
        }
        case PlanNode::Op::MMSelectTable:
        case PlanNode::Op::Select: {
            expect_children(node, 1);
            PlanType child = type_check(*node.children[0], env);
            if (child.is_latent) {
                throw ValidationError(to_string(node.op) + " requires a table input");
            }
            if (!node.cond) throw ValidationError(to_string(node.op) + " needs a condition");
            bool known = std::any_of(child.attrs.begin(), child.attrs.end(),
                                     [&](const Attribute& a) { return a.name == node.cond->attr; });
            if (!known) {
                throw ValidationError("condition attribute '" + node.cond->attr + "' not found");
            }
            return child;
        }
        case PlanNode::Op::MMAggregate:
        case PlanNode::Op::Aggregate: {
            expect_children(node, 1);
            PlanType child = type_check(*node.children[0], env);
            if (child.is_latent) {
                throw ValidationError(to_string(node.op) + " requires a table input");
            }
            bool known = std::any_of(child.attrs.begin(), child.attrs.end(),
                                     [&](const Attribute& a) { return a.name == node.agg_attr; });
            if (!known) {
                throw ValidationError("group attribute '" + node.agg_attr + "' not found");
            }
            PlanType t;
            t.attrs.push_back(Attribute{node.agg_attr, AttrType::text});
            if (node.agg == AggFunc::count) {
                t.attrs.push_back(Attribute{"count", AttrType::number});
            } else {
                for (const auto& a : child.attrs) {
                    if (a.name != node.agg_attr && a.type != AttrType::path) {
                        t.attrs.push_back(Attribute{a.name, AttrType::text});
                    }
                }
            }
            return t;
        }
        case PlanNode::Op::Join: {
            expect_children(node, 2);
            PlanType left = type_check(*node.children[0], env);
            PlanType right = type_check(*node.children[1], env);
            if (left.is_latent || right.is_latent) {
                throw ValidationError("Join requires table inputs; use MMJoin for latent tables");
            }
            PlanType t = table_type(left.attrs, left.extracted);
            for (const auto& a : right.attrs) {
                bool is_key = std::find(node.keys.begin(), node.keys.end(), a.name) !=
                                  node.keys.end() ||
                              (a.type == AttrType::path &&
                               std::find(node.keys.begin(), node.keys.end(), "path") !=
                                   node.keys.end());
                if (is_key) continue;
                t.attrs.push_back(a);
                if (right.extracted.contains(a.name)) t.extracted.insert(a.name);
            }
            return t;
        }
        case PlanNode::Op::Union: {
            expect_children(node, 2);
            PlanType left = type_check(*node.children[0], env);
            PlanType right = type_check(*node.children[1], env);
            if (left.is_latent || right.is_latent) {
                throw ValidationError("Union requires table inputs; use MMUnion for latent "
                                      "tables");
            }
            PlanType t = table_type(left.attrs, left.extracted);
            for (const auto& a : left.attrs) {
                if (right.extracted.contains(a.name)) t.extracted.insert(a.name);
            }
            return t;
        }
        case PlanNode::Op::Project: {
            expect_children(node, 1);
            PlanType child = type_check(*node.children[0], env);
            if (child.is_latent) {
                throw ValidationError("Project requires a table input; use MMProject for latent "
                                      "tables");
            }
            PlanType t;
            for (const auto& name : node.attrs) {
                auto it = std::find_if(child.attrs.begin(), child.attrs.end(),
                                       [&](const Attribute& a) { return a.name == name; });
                if (it == child.attrs.end()) {
                    throw ValidationError("unknown attribute '" + name + "' in Project");
                }
                t.attrs.push_back(*it);
                if (child.extracted.contains(name)) t.extracted.insert(name);
            }
            return t;
        }
    }
    throw ValidationError("unhandled plan node");
}

// --- parser ---

namespace {

class Parser {
public:
    Parser(const std::string& text, const PlanEnv& env) : text_(text), env_(env) {}

    PlanPtr parse() {
        PlanPtr plan = parse_expr();
        skip_ws();
        if (pos_ != text_.size()) fail("trailing input");
        return plan;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw ValidationError("syntax error at position " + std::to_string(pos_) + ": " + what);
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
            ++pos_;
        }
    }

    bool peek(char c) {
        skip_ws();
        return pos_ < text_.size() && text_[pos_] == c;
    }

    void expect(char c) {
        skip_ws();
        if (pos_ >= text_.size() || text_[pos_] != c) {
            fail(std::string("expected '") + c + "'");
        }
        ++pos_;
    }

    std::string ident() {
        skip_ws();
        std::size_t start = pos_;
        while (pos_ < text_.size()) {
            char c = text_[pos_];
            if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.') {
                ++pos_;
            } else {
                break;
            }
        }
        if (start == pos_) fail("expected a name");
        return text_.substr(start, pos_ - start);
    }

    // contents of [...] split at commas; '=' binds a condition value that may
    // contain spaces but not ',' or ']'
    std::vector<std::string> params() {
        expect('[');
        std::vector<std::string> out;
        std::string current;
        while (pos_ < text_.size() && text_[pos_] != ']') {
            if (text_[pos_] == ',') {
                out.push_back(trim(current));
                current.clear();
            } else {
                current.push_back(text_[pos_]);
            }
            ++pos_;
        }
        if (pos_ >= text_.size()) fail("unterminated '['");
        ++pos_;
        if (!trim(current).empty() || !out.empty()) out.push_back(trim(current));
        return out;
    }

    PlanPtr leaf(const std::string& name) {
        auto node = std::make_unique<PlanNode>();
        node->name = name;
        if (env_.catalog.has_latent(name)) {
            node->op = PlanNode::Op::LatentRef;
        } else if (env_.catalog.has_table(name)) {
            node->op = PlanNode::Op::TableRef;
        } else {
            fail("unknown catalog entry '" + name + "'");
        }
        return node;
    }

    Condition parse_condition(const std::vector<std::string>& args) {
        if (args.size() != 1) fail("selection expects one attr=value parameter");
        auto eq = args[0].find('=');
        if (eq == std::string::npos) fail("selection parameter must be attr=value");
        Condition cond;
        cond.attr = trim(args[0].substr(0, eq));
        cond.value = trim(args[0].substr(eq + 1));
        if (cond.attr.empty() || cond.value.empty()) fail("selection needs attr and value");
        return cond;
    }

    PlanPtr parse_expr() {
        std::string name = ident();
        skip_ws();
        if (!peek('[') && !peek('(')) return leaf(name);

        auto node = std::make_unique<PlanNode>();
        std::vector<std::string> args;
        if (peek('[')) args = params();

        if (name == "Scan" || name == "MMScan") {
            node->op = PlanNode::Op::MMScan;
        } else if (name == "MMJoin") {
            node->op = PlanNode::Op::MMJoin;
            node->keys = args;
        } else if (name == "Join") {
            node->op = PlanNode::Op::Join;
            node->keys = args;
        } else if (name == "MMUnion") {
            node->op = PlanNode::Op::MMUnion;
        } else if (name == "Union") {
            node->op = PlanNode::Op::Union;
        } else if (name == "MMProject") {
            node->op = PlanNode::Op::MMProject;
            node->attrs = args;
        } else if (name == "Project") {
            node->op = PlanNode::Op::Project;
            node->attrs = args;
        } else if (name == "MMSelectLatent") {
            node->op = PlanNode::Op::MMSelectLatent;
            node->cond = parse_condition(args);
        } else if (name == "MMSelectTable") {
            node->op = PlanNode::Op::MMSelectTable;
            node->cond = parse_condition(args);
        } else if (name == "Select") {
            node->op = PlanNode::Op::Select;
            node->cond = parse_condition(args);
        } else if (name == "MMAggregate" || name == "Agg" || name == "Aggregate") {
            node->op = name == "MMAggregate" ? PlanNode::Op::MMAggregate : PlanNode::Op::Aggregate;
            if (args.size() != 2) fail("aggregation expects [func,attr]");
            if (args[0] == "list") {
                node->agg = AggFunc::list;
            } else if (args[0] == "count") {
                node->agg = AggFunc::count;
            } else {
                fail("unknown aggregation function '" + args[0] + "'");
            }
            node->agg_attr = args[1];
        } else {
            fail("unknown operator '" + name + "'");
        }

        expect('(');
        node->children.push_back(parse_expr());
        while (peek(',')) {
            expect(',');
            node->children.push_back(parse_expr());
        }
        expect(')');
        return node;
    }

    const std::string& text_;
    const PlanEnv& env_;
    std::size_t pos_ = 0;
};

}  // namespace

PlanPtr parse_plan(const std::string& text, const PlanEnv& env) {
    Parser parser(text, env);
    PlanPtr plan = parser.parse();
    type_check(*plan, env);
    return plan;
}

namespace {

PlanPtr plan_from_json(const json& j, const PlanEnv& env) {
    auto node = std::make_unique<PlanNode>();
    const std::string op = j.at("op").get<std::string>();
    static const std::map<std::string, PlanNode::Op> ops = {
        {"TableRef", PlanNode::Op::TableRef},
        {"LatentRef", PlanNode::Op::LatentRef},
        {"MMScan", PlanNode::Op::MMScan},
        {"Scan", PlanNode::Op::MMScan},
        {"MMJoin", PlanNode::Op::MMJoin},
        {"MMUnion", PlanNode::Op::MMUnion},
        {"MMProject", PlanNode::Op::MMProject},
        {"MMSelectLatent", PlanNode::Op::MMSelectLatent},
        {"MMSelectTable", PlanNode::Op::MMSelectTable},
        {"MMAggregate", PlanNode::Op::MMAggregate},
        {"Join", PlanNode::Op::Join},
        {"Union", PlanNode::Op::Union},
        {"Project", PlanNode::Op::Project},
        {"Select", PlanNode::Op::Select},
        {"Aggregate", PlanNode::Op::Aggregate},
    };
    auto it = ops.find(op);
    if (it == ops.end()) throw ValidationError("unknown plan op '" + op + "'");
    node->op = it->second;
    if (j.contains("name")) node->name = j["name"].get<std::string>();
    if (j.contains("attrs")) node->attrs = j["attrs"].get<std::vector<std::string>>();
    if (j.contains("keys")) node->keys = j["keys"].get<std::vector<std::string>>();
    if (j.contains("cond")) {
        node->cond = Condition{j["cond"].at("attr").get<std::string>(),
                               j["cond"].at("value").get<std::string>()};
    }
    if (j.contains("agg")) {
        const std::string f = j["agg"].at("func").get<std::string>();
        if (f == "list") {
            node->agg = AggFunc::list;
        } else if (f == "count") {
            node->agg = AggFunc::count;
        } else {
            throw ValidationError("unknown aggregation function '" + f + "'");
        }
        node->agg_attr = j["agg"].at("attr").get<std::string>();
    }
    if (j.contains("inputs")) {
        for (const auto& child : j["inputs"]) {
            node->children.push_back(plan_from_json(child, env));
        }
    }
    return node;
}

}  // namespace

PlanPtr parse_plan_json(const std::string& json_text, const PlanEnv& env) {
    PlanPtr plan = plan_from_json(json::parse(json_text), env);
    type_check(*plan, env);
    return plan;
}

// --- rewrite ---

namespace {

// names that must stay projected when pushing a projection into the latent
// side of a scan or join
std::vector<std::string> needed_latent_attrs(const PlanType& latent,
                                             const std::vector<std::string>& wanted,
                                             const std::vector<std::string>& join_keys) {
    std::vector<std::string> current = latent.latent_attr_names();
    std::vector<std::string> needed;
    for (const auto& name : current) {
        bool keep = std::find(wanted.begin(), wanted.end(), name) != wanted.end() ||
                    std::find(join_keys.begin(), join_keys.end(), name) != join_keys.end();
        if (!keep && latent.schema->kind == TableKind::multi_row) {
            keep = name == *latent.schema->document_level_key;
        }
        if (keep) needed.push_back(name);
    }
    return needed;
}

PlanPtr make_mmproject(PlanPtr child, std::vector<std::string> attrs) {
    auto node = std::make_unique<PlanNode>();
    node->op = PlanNode::Op::MMProject;
    node->attrs = std::move(attrs);
    node->children.push_back(std::move(child));
    return node;
}

bool rewrite_node(PlanPtr& node, const PlanEnv& env);

bool rewrite_children(PlanNode& node, const PlanEnv& env) {
    for (auto& child : node.children) {
        if (rewrite_node(child, env)) return true;
    }
    return false;
}

bool rewrite_node(PlanPtr& node, const PlanEnv& env) {
    // Join_{keys}(T, MMScan(L)) => MMJoin_{keys}(T, L)
    if (node->op == PlanNode::Op::Join && node->children[1]->op == PlanNode::Op::MMScan) {
        PlanType left = type_check(*node->children[0], env);
        if (!left.is_latent) {
            auto fused = std::make_unique<PlanNode>();
            fused->op = PlanNode::Op::MMJoin;
            fused->keys = node->keys;
            fused->children.push_back(std::move(node->children[0]));
            fused->children.push_back(std::move(node->children[1]->children[0]));
            node = std::move(fused);
            return true;
        }
    }

    // Union(T, MMScan(L)) => MMUnion(T, L)
    if (node->op == PlanNode::Op::Union && node->children[1]->op == PlanNode::Op::MMScan) {
        PlanType left = type_check(*node->children[0], env);
        if (!left.is_latent) {
            auto fused = std::make_unique<PlanNode>();
            fused->op = PlanNode::Op::MMUnion;
            fused->children.push_back(std::move(node->children[0]));
            fused->children.push_back(std::move(node->children[1]->children[0]));
            node = std::move(fused);
            return true;
        }
    }

    // Project(MMScan(L)) => Project(MMScan(MMProject(L)))
    if (node->op == PlanNode::Op::Project && node->children[0]->op == PlanNode::Op::MMScan) {
        PlanNode& scan = *node->children[0];
        PlanType latent = type_check(*scan.children[0], env);
        auto needed = needed_latent_attrs(latent, node->attrs, {});
        if (needed.size() < latent.latent_attrs.size()) {
            scan.children[0] = make_mmproject(std::move(scan.children[0]), std::move(needed));
            return true;
        }
    }

    // Project(MMJoin(T, L)) => Project(MMJoin(T, MMProject(L)))
    if (node->op == PlanNode::Op::Project && node->children[0]->op == PlanNode::Op::MMJoin) {
        PlanNode& join = *node->children[0];
        PlanType latent = type_check(*join.children[1], env);
        auto needed = needed_latent_attrs(latent, node->attrs, join.keys);
        if (needed.size() < latent.latent_attrs.size()) {
            join.children[1] = make_mmproject(std::move(join.children[1]), std::move(needed));
            return true;
        }
    }

    // Project(MMUnion(T, L)) => MMUnion(Project(T), L); extraction follows the
    // tabular schema, so narrowing the table narrows the extraction too
    if (node->op == PlanNode::Op::Project && node->children[0]->op == PlanNode::Op::MMUnion) {
        PlanNode& mm_union_node = *node->children[0];
        PlanType left = type_check(*mm_union_node.children[0], env);
        PlanType latent = type_check(*mm_union_node.children[1], env);
        bool key_kept = latent.schema->kind == TableKind::single_row ||
                        std::find(node->attrs.begin(), node->attrs.end(),
                                  *latent.schema->document_level_key) != node->attrs.end();
        if (key_kept && node->attrs.size() < left.attrs.size()) {
            auto project = std::make_unique<PlanNode>();
            project->op = PlanNode::Op::Project;
            project->attrs = node->attrs;
            project->children.push_back(std::move(mm_union_node.children[0]));
            mm_union_node.children[0] = std::move(project);
            node = std::move(node->children[0]);
            return true;
        }
    }

    // Select(MMScan(L)) => MMScan(MMSelectLatent(L)) when an index exists;
    // only for single-row tables, where the document filter equals the row
    // filter
    if (node->op == PlanNode::Op::Select && node->children[0]->op == PlanNode::Op::MMScan) {
        PlanNode& scan = *node->children[0];
        PlanType latent = type_check(*scan.children[0], env);
        bool is_latent_attr = latent.schema->attr_index(node->cond->attr).has_value();
        if (is_latent_attr && latent.schema->kind == TableKind::single_row &&
            env.find_index(latent.schema->qualified_name(), node->cond->attr) != nullptr) {
            auto select = std::make_unique<PlanNode>();
            select->op = PlanNode::Op::MMSelectLatent;
            select->cond = node->cond;
            select->children.push_back(std::move(scan.children[0]));
            scan.children[0] = std::move(select);
            node = std::move(node->children[0]);
            return true;
        }
    }

    // Select over extracted columns => MMSelectTable
    if (node->op == PlanNode::Op::Select) {
        PlanType child = type_check(*node->children[0], env);
        if (child.extracted.contains(node->cond->attr)) {
            node->op = PlanNode::Op::MMSelectTable;
            return true;
        }
    }

    // Aggregate over extracted columns => MMAggregate
    if (node->op == PlanNode::Op::Aggregate) {
        PlanType child = type_check(*node->children[0], env);
        if (child.extracted.contains(node->agg_attr)) {
            node->op = PlanNode::Op::MMAggregate;
            return true;
        }
    }

    return rewrite_children(*node, env);
}

}  // namespace

RewriteResult rewrite(const PlanNode& plan, const PlanEnv& env) {
    RewriteResult result;
    result.plan = plan.clone();
    while (rewrite_node(result.plan, env)) {
        ++result.applications;
        if (result.applications >= 100) {
            throw ExecError("rewrite did not reach a fixpoint in 100 applications");
        }
    }
    type_check(*result.plan, env);
    return result;
}

// --- execution ---

namespace {

struct Evaluator {
    const PlanEnv& env;
    ExecContext& ctx;
    std::optional<AggResult> root_agg;

    struct Value {
        Table table;
        std::optional<LatentHandle> latent;
    };

    Value eval(const PlanNode& node, bool is_root) {
        const auto started = std::chrono::steady_clock::now();
        const std::size_t calls_before = ctx.report.encode_calls;
        const std::size_t docs_before = ctx.report.docs_touched.size();

        Value value = dispatch(node, is_root);

        NodeReport report;
        report.label = node.op == PlanNode::Op::TableRef || node.op == PlanNode::Op::LatentRef
                           ? node.name
                           : node.render().substr(0, node.render().find('('));
        report.millis = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - started)
                            .count();
        report.encode_calls = ctx.report.encode_calls - calls_before;
        report.docs_touched = ctx.report.docs_touched.size() - docs_before;
        ctx.report.nodes.push_back(std::move(report));
        return value;
    }

    Table table_of(const PlanNode& node) {
        Value v = eval(node, false);
        if (v.latent) throw ValidationError("latent handle reached a table operator");
        return std::move(v.table);
    }

    LatentHandle latent_of(const PlanNode& node) {
        Value v = eval(node, false);
        if (!v.latent) throw ValidationError("table reached a latent operator");
        return std::move(*v.latent);
    }

    Value dispatch(const PlanNode& node, bool is_root) {
        Value out;
        switch (node.op) {
            case PlanNode::Op::TableRef:
                out.table = env.catalog.table(node.name);
                break;
            case PlanNode::Op::LatentRef:
                out.latent = LatentHandle::open(env.catalog, node.name);
                break;
            case PlanNode::Op::MMProject:
                out.latent = mm_project(latent_of(*node.children[0]), node.attrs);
                break;
            case PlanNode::Op::MMSelectLatent: {
                LatentHandle handle = latent_of(*node.children[0]);
                const MultiModalIndex* index =
                    env.find_index(handle.schema->qualified_name(), node.cond->attr);
                out.latent = mm_select_latent(handle, *node.cond, index, ctx);
                break;
            }
            case PlanNode::Op::MMScan:
                out.table = mm_scan(latent_of(*node.children[0]), ctx);
                break;
            case PlanNode::Op::MMJoin: {
                Table left = table_of(*node.children[0]);
                out.table = mm_join(left, latent_of(*node.children[1]), node.keys, ctx);
                break;
            }
            case PlanNode::Op::MMUnion: {
                Table left = table_of(*node.children[0]);
                out.table = mm_union(left, latent_of(*node.children[1]), ctx);
                break;
            }
            case PlanNode::Op::MMSelectTable:
                out.table = mm_select_table(table_of(*node.children[0]), *node.cond, ctx);
                break;
            case PlanNode::Op::MMAggregate: {
                AggResult agg = mm_aggregate(table_of(*node.children[0]), node.agg_attr, node.agg,
                                             ctx);
                out.table = agg.table;
                if (is_root) root_agg = std::move(agg);
                break;
            }
            case PlanNode::Op::Join:
                out.table = t_join(table_of(*node.children[0]), table_of(*node.children[1]),
                                   node.keys);
                break;
            case PlanNode::Op::Union:
                out.table = t_union(table_of(*node.children[0]), table_of(*node.children[1]));
                break;
            case PlanNode::Op::Project:
                out.table = t_project(table_of(*node.children[0]), node.attrs);
                break;
            case PlanNode::Op::Select:
                out.table = t_select(table_of(*node.children[0]), *node.cond);
                break;
            case PlanNode::Op::Aggregate: {
                AggResult agg = t_aggregate(table_of(*node.children[0]), node.agg_attr, node.agg);
                out.table = agg.table;
                if (is_root) root_agg = std::move(agg);
                break;
            }
        }
        return out;
    }
};

}  // namespace

ExecutionResult execute(const PlanNode& plan, const PlanEnv& env, const Encoder& encoder,
                        const HeadWeights& weights, const ExecOptions& options) {
    PlanType type = type_check(plan, env);
    if (type.is_latent) {
        throw ValidationError("plan yields a latent handle; wrap it in Scan(...) to materialize");
    }
    ExecContext ctx(encoder, weights, options);
    Evaluator evaluator{env, ctx, std::nullopt};
    Evaluator::Value value = evaluator.eval(plan, true);
    ExecutionResult result;
    result.table = std::move(value.table);
    result.report = std::move(ctx.report);
    result.aggregation = std::move(evaluator.root_agg);
    return result;
}

}  // namespace ltq
