//! Plan skeletons from demonstrations: skill definitions, deterministic
//! prompt construction, structured-output schema generation, semantic-plan
//! parsing, and non-semantic parameter expansion.
//!
//! The language model sits behind [`PlannerBackend`]; tests use the bundled
//! mock, deployments can point the HTTP adapter at a real endpoint.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::kv::parse_key_values;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("duplicate skill name `{0}`")]
    DuplicateSkill(String),
    #[error("skill set has more than one search-role skill (`{0}` and `{1}`)")]
    DuplicateSearchSkill(String, String),
    #[error("no human-inferable skills to build a prompt from")]
    NoInferableSkills,
    #[error("{path}: {message}")]
    BadResponse { path: String, message: String },
    #[error("step {step}: unknown skill `{skill}`")]
    UnknownSkill { step: usize, skill: String },
    #[error("step {step}: {message}")]
    HookFailure { step: usize, message: String },
    #[error("plan uses a search hook but the skill set defines no search-role skill")]
    NoSearchSkill,
    #[error("step index {index} out of range for a {len}-step plan")]
    StepOutOfRange { index: usize, len: usize },
    #[error("invalid skills file: {0}")]
    BadSkillsFile(String),
    #[error("backend config: {0}")]
    BadBackendConfig(String),
    #[error("backend request failed: {0}")]
    Backend(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A named semantic parameter with its prompt description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub description: String,
}

/// What a skill's `generate_parameters` hook does during plan expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HookKind {
    /// Prepends the search step, registers the grasped object under a
    /// detector id, and adds that id to the search targets.
    Grasp,
    /// Prepends the search step and adds the place name to the search
    /// targets.
    Place,
    /// Marks the skill the grasp/place hooks insert.
    Search,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillDefinition {
    /// Whether the skill can be inferred from a human video; only these
    /// appear in the prompt and output schema.
    pub human_inferable: bool,
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub semantic_params: Vec<ParamSpec>,
    /// Type tags for parameters filled in at expansion time.
    #[serde(default)]
    pub nonsemantic_params: Vec<String>,
    #[serde(default)]
    pub hook: Option<HookKind>,
}

/// A validated set of skills with unique names and at most one search role.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillSet {
    skills: Vec<SkillDefinition>,
}

impl SkillSet {
    pub fn new(skills: Vec<SkillDefinition>) -> Result<Self, PlanError> {
        let mut names = std::collections::BTreeSet::new();
        let mut search: Option<&str> = None;
        for skill in &skills {
            if !names.insert(skill.name.clone()) {
                return Err(PlanError::DuplicateSkill(skill.name.clone()));
            }
            if skill.hook == Some(HookKind::Search) {
                if let Some(first) = search {
                    return Err(PlanError::DuplicateSearchSkill(
                        first.to_string(),
                        skill.name.clone(),
                    ));
                }
                search = Some(&skill.name);
            }
        }
        Ok(SkillSet { skills })
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let skills: Vec<SkillDefinition> =
            serde_json::from_str(text).map_err(|e| PlanError::BadSkillsFile(e.to_string()))?;
        SkillSet::new(skills)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.skills).expect("skills serialize")
    }

    pub fn skills(&self) -> &[SkillDefinition] {
        &self.skills
    }

    pub fn get(&self, name: &str) -> Option<&SkillDefinition> {
        self.skills.iter().find(|s| s.name == name)
    }

    pub fn human_inferable(&self) -> impl Iterator<Item = &SkillDefinition> {
        self.skills.iter().filter(|s| s.human_inferable)
    }

    pub fn search_skill(&self) -> Option<&SkillDefinition> {
        self.skills.iter().find(|s| s.hook == Some(HookKind::Search))
    }
}

/// The built-in pick-and-place sorting skills: a non-inferable search skill
/// plus inferable place and pick skills with their hooks wired up.
pub fn pick_place_skills() -> SkillSet {
    SkillSet::new(vec![
        SkillDefinition {
            human_inferable: false,
            name: "Search".into(),
            description: "Scan the environment until every requested object has been found".into(),
            semantic_params: vec![],
            nonsemantic_params: vec!["detector".into(), "object_set".into()],
            hook: Some(HookKind::Search),
        },
        SkillDefinition {
            human_inferable: true,
            name: "Place".into(),
            description: "Place an object onto another object.  Cannot be used for putting an object carefully inside another or into a hole.".into(),
            semantic_params: vec![
                ParamSpec {
                    name: "place_name".into(),
                    description: "Where to put the object currently being held".into(),
                },
                ParamSpec {
                    name: "careful".into(),
                    description: "Whether to carefully place the object down or drop it".into(),
                },
            ],
            nonsemantic_params: vec![],
            hook: Some(HookKind::Place),
        },
        SkillDefinition {
            human_inferable: true,
            name: "Pick".into(),
            description: "Grasp an object once the object has been found".into(),
            semantic_params: vec![
                ParamSpec {
                    name: "object_name".into(),
                    description: "The object to manipulate".into(),
                },
                ParamSpec {
                    name: "future_manipulation".into(),
                    description: "The next action we will do with the object after picking it up".into(),
                },
            ],
            nonsemantic_params: vec!["mod_id".into()],
            hook: Some(HookKind::Grasp),
        },
    ])
    .expect("built-in skills are valid")
}

/// "places and picks" / "place or pick" style noun lists.
fn noun_list(names: &[&str], conjunction: &str, plural: bool) -> String {
    let nouns: Vec<String> = names
        .iter()
        .map(|n| {
            let lower = n.to_lowercase();
            if plural {
                format!("{lower}s")
            } else {
                lower
            }
        })
        .collect();
    match nouns.len() {
        0 => String::new(),
        1 => nouns[0].clone(),
        2 => format!("{} {conjunction} {}", nouns[0], nouns[1]),
        _ => {
            let head = nouns[..nouns.len() - 1].join(", ");
            format!("{head}, {conjunction} {}", nouns[nouns.len() - 1])
        }
    }
}

/// Render the planner prompt over the human-inferable skills. Deterministic
/// and byte-stable: same skills, same text.
pub fn build_prompt(skills: &SkillSet) -> Result<String, PlanError> {
    let inferable: Vec<&SkillDefinition> = skills.human_inferable().collect();
    if inferable.is_empty() {
        return Err(PlanError::NoInferableSkills);
    }
    let names: Vec<&str> = inferable.iter().map(|s| s.name.as_str()).collect();
    let mut prompt = String::new();
    write!(
        prompt,
        "You will be provided with a video of a human doing a sequence of {}.  \
         You should analyze the video to determine the actions taken and the objects involved \
         and return this information using the schema provided.  \
         Here is a description of the actions and the parameters:",
        noun_list(&names, "and", true)
    )
    .expect("writing to a string");
    for skill in &inferable {
        write!(prompt, "\n- {}: {}", skill.name, skill.description).expect("writing to a string");
        for param in &skill.semantic_params {
            write!(prompt, "\n  - {}: {}", param.name, param.description)
                .expect("writing to a string");
        }
    }
    write!(
        prompt,
        "\n- plan: A list of actions, each of which describes one {} along with the objects involved.",
        noun_list(&names, "or", false)
    )
    .expect("writing to a string");
    Ok(prompt)
}

/// The field that names the skill inside each plan step.
pub const ACTION_FIELD: &str = "action";

/// JSON Schema forcing the model to emit a plan whose steps are one of the
/// human-inferable skill shapes, with string values for every semantic
/// parameter and the skill name as a fixed discriminator.
pub fn build_schema(skills: &SkillSet) -> Result<Value, PlanError> {
    let inferable: Vec<&SkillDefinition> = skills.human_inferable().collect();
    if inferable.is_empty() {
        return Err(PlanError::NoInferableSkills);
    }
    let skill_types: Vec<Value> = inferable
        .iter()
        .map(|skill| {
            let mut properties = serde_json::Map::new();
            properties.insert(ACTION_FIELD.to_string(), json!({ "const": skill.name }));
            let mut required = vec![Value::String(ACTION_FIELD.to_string())];
            for param in &skill.semantic_params {
                properties.insert(
                    param.name.clone(),
                    json!({ "type": "string", "description": param.description }),
                );
                required.push(Value::String(param.name.clone()));
            }
            json!({
                "type": "object",
                "title": skill.name,
                "properties": Value::Object(properties),
                "required": required,
                "additionalProperties": false,
            })
        })
        .collect();
    Ok(json!({
        "name": "ActionPlan",
        "type": "object",
        "properties": {
            "plan": {
                "type": "array",
                "description": "A sequence of actions",
                "items": { "oneOf": skill_types },
            }
        },
        "required": ["plan"],
        "additionalProperties": false,
    }))
}

/// One semantic step: a skill name with its language-level parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub skill: String,
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SemanticPlan {
    pub steps: Vec<PlanStep>,
}

/// Validate a structured model response against the human-inferable skills.
pub fn parse_plan(response: &str, skills: &SkillSet) -> Result<SemanticPlan, PlanError> {
    let doc: Value = serde_json::from_str(response).map_err(|e| PlanError::BadResponse {
        path: "$".to_string(),
        message: e.to_string(),
    })?;
    let plan = doc
        .get("plan")
        .and_then(Value::as_array)
        .ok_or_else(|| PlanError::BadResponse {
            path: "$.plan".to_string(),
            message: "missing or not an array".to_string(),
        })?;

    let mut steps = Vec::with_capacity(plan.len());
    for (i, raw) in plan.iter().enumerate() {
        let at = format!("$.plan[{i}]");
        let step = raw.as_object().ok_or_else(|| PlanError::BadResponse {
            path: at.clone(),
            message: "not an object".to_string(),
        })?;
        let name = step
            .get(ACTION_FIELD)
            .and_then(Value::as_str)
            .ok_or_else(|| PlanError::BadResponse {
                path: format!("{at}.{ACTION_FIELD}"),
                message: "missing or not a string".to_string(),
            })?;
        let skill = skills
            .human_inferable()
            .find(|s| s.name == name)
            .ok_or_else(|| PlanError::BadResponse {
                path: format!("{at}.{ACTION_FIELD}"),
                message: format!("unknown skill `{name}`"),
            })?;
        let mut params = BTreeMap::new();
        for spec in &skill.semantic_params {
            let value = step
                .get(&spec.name)
                .and_then(Value::as_str)
                .ok_or_else(|| PlanError::BadResponse {
                    path: format!("{at}.{}", spec.name),
                    message: "missing or not a string".to_string(),
                })?;
            params.insert(spec.name.clone(), value.to_string());
        }
        for key in step.keys() {
            if key != ACTION_FIELD && !skill.semantic_params.iter().any(|p| &p.name == key) {
                return Err(PlanError::BadResponse {
                    path: format!("{at}.{key}"),
                    message: format!("parameter not declared by skill `{name}`"),
                });
            }
        }
        steps.push(PlanStep {
            skill: name.to_string(),
            params,
        });
    }
    Ok(SemanticPlan { steps })
}

/// What the search step will look for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchTarget {
    /// An object the trained detector recognizes by instance id.
    Detector { mod_id: u32, object_name: String },
    /// An object found by name through the open-vocabulary pipeline.
    Semantic { name: String },
}

/// A step with non-semantic values filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullStep {
    pub skill: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mod_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub search_targets: Vec<SearchTarget>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FullPlan {
    pub steps: Vec<FullStep>,
}

impl From<SemanticPlan> for FullPlan {
    fn from(plan: SemanticPlan) -> Self {
        FullPlan {
            steps: plan
                .steps
                .into_iter()
                .map(|s| FullStep {
                    skill: s.skill,
                    params: s.params,
                    mod_id: None,
                    search_targets: Vec::new(),
                })
                .collect(),
        }
    }
}

impl FullPlan {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("plan serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        serde_json::from_str(text).map_err(|e| PlanError::BadResponse {
            path: "$".to_string(),
            message: e.to_string(),
        })
    }
}

fn required_param(
    step: &FullStep,
    index: usize,
    name: &str,
) -> Result<String, PlanError> {
    step.params
        .get(name)
        .cloned()
        .ok_or_else(|| PlanError::HookFailure {
            step: index,
            message: format!("skill `{}` is missing parameter `{name}`", step.skill),
        })
}

/// Run every skill's parameter hook in plan order.
///
/// Grasp-like steps receive detector ids 0, 1, 2, ... in first-grasp order
/// (a later search matches grasped objects to ids by that same order), and
/// grasp/place hooks prepend a single search step whose target set collects
/// detector ids and place names. Idempotent: expanding an expanded plan
/// changes nothing.
pub fn expand_plan(plan: &FullPlan, skills: &SkillSet) -> Result<FullPlan, PlanError> {
    let mut steps = plan.steps.clone();

    // Resolve hooks up front; unknown skills are an error.
    let hooks: Vec<Option<HookKind>> = steps
        .iter()
        .enumerate()
        .map(|(i, step)| {
            skills
                .get(&step.skill)
                .map(|s| s.hook)
                .ok_or_else(|| PlanError::UnknownSkill {
                    step: i,
                    skill: step.skill.clone(),
                })
        })
        .collect::<Result<_, _>>()?;

    // Detector ids in first-grasp order, honoring ids already assigned.
    let mut ids: BTreeMap<String, u32> = BTreeMap::new();
    let mut next_id = 0u32;
    for (i, step) in steps.iter().enumerate() {
        if hooks[i] != Some(HookKind::Grasp) {
            continue;
        }
        if let Some(existing) = step.mod_id {
            let name = required_param(step, i, "object_name")?;
            ids.entry(name).or_insert(existing);
            next_id = next_id.max(existing + 1);
        }
    }
    for (i, step) in steps.iter_mut().enumerate() {
        if hooks[i] != Some(HookKind::Grasp) {
            continue;
        }
        let name = required_param(step, i, "object_name")?;
        let id = *ids.entry(name).or_insert_with(|| {
            let id = next_id;
            next_id += 1;
            id
        });
        step.mod_id = Some(id);
    }

    let needs_search = hooks
        .iter()
        .any(|h| matches!(h, Some(HookKind::Grasp) | Some(HookKind::Place)));
    if !needs_search {
        return Ok(FullPlan { steps });
    }
    let search_skill = skills.search_skill().ok_or(PlanError::NoSearchSkill)?;

    // Collect targets in plan order.
    let mut targets: Vec<SearchTarget> = Vec::new();
    let push_unique = |t: SearchTarget, targets: &mut Vec<SearchTarget>| {
        if !targets.contains(&t) {
            targets.push(t);
        }
    };
    for (i, step) in steps.iter().enumerate() {
        match hooks[i] {
            Some(HookKind::Grasp) => {
                let name = required_param(step, i, "object_name")?;
                push_unique(
                    SearchTarget::Detector {
                        mod_id: step.mod_id.expect("assigned above"),
                        object_name: name,
                    },
                    &mut targets,
                );
            }
            Some(HookKind::Place) => {
                let name = required_param(step, i, "place_name")?;
                push_unique(SearchTarget::Semantic { name }, &mut targets);
            }
            _ => {}
        }
    }

    let search_pos = steps.iter().position(|s| s.skill == search_skill.name);
    match search_pos {
        Some(pos) => {
            for target in targets {
                if !steps[pos].search_targets.contains(&target) {
                    steps[pos].search_targets.push(target);
                }
            }
        }
        None => steps.insert(
            0,
            FullStep {
                skill: search_skill.name.clone(),
                params: BTreeMap::new(),
                mod_id: None,
                search_targets: targets,
            },
        ),
    }
    Ok(FullPlan { steps })
}

/// Remove one step; everything else is untouched.
pub fn skip_step(plan: &FullPlan, index: usize) -> Result<FullPlan, PlanError> {
    if index >= plan.steps.len() {
        return Err(PlanError::StepOutOfRange {
            index,
            len: plan.steps.len(),
        });
    }
    let mut steps = plan.steps.clone();
    steps.remove(index);
    Ok(FullPlan { steps })
}

/// Replace an object or place name everywhere it appears: parameter values
/// and search targets.
pub fn rename_label(plan: &FullPlan, from: &str, to: &str) -> FullPlan {
    let mut steps = plan.steps.clone();
    for step in &mut steps {
        for value in step.params.values_mut() {
            if value == from {
                *value = to.to_string();
            }
        }
        for target in &mut step.search_targets {
            match target {
                SearchTarget::Detector { object_name, .. } if object_name == from => {
                    *object_name = to.to_string();
                }
                SearchTarget::Semantic { name } if name == from => {
                    *name = to.to_string();
                }
                _ => {}
            }
        }
    }
    FullPlan { steps }
}

/// Rewrite detector ids (the manual fix when a detector splits an object
/// into sub-parts and grasp order no longer matches ids).
pub fn remap_mod_ids(plan: &FullPlan, mapping: &BTreeMap<u32, u32>) -> FullPlan {
    let mut steps = plan.steps.clone();
    for step in &mut steps {
        if let Some(id) = step.mod_id {
            if let Some(&new) = mapping.get(&id) {
                step.mod_id = Some(new);
            }
        }
        for target in &mut step.search_targets {
            if let SearchTarget::Detector { mod_id, .. } = target {
                if let Some(&new) = mapping.get(mod_id) {
                    *mod_id = new;
                }
            }
        }
    }
    FullPlan { steps }
}

/// Frame indices for subsampling a video to roughly `target_hz`.
pub fn subsample_frames(frame_count: usize, fps: f64, target_hz: f64) -> Vec<usize> {
    let stride = (fps / target_hz).round().max(1.0) as usize;
    (0..frame_count).step_by(stride).collect()
}

/// Everything a planner backend needs for one request.
pub struct PlanRequest<'a> {
    pub prompt: &'a str,
    pub schema: &'a Value,
    pub frame_indices: &'a [usize],
}

pub trait PlannerBackend {
    /// Returns the model's structured response text (JSON conforming to the
    /// request schema).
    fn generate(&self, request: &PlanRequest<'_>) -> Result<String, PlanError>;
}

/// Canned-response backend for tests and offline runs.
pub struct MockBackend {
    response: String,
}

impl MockBackend {
    pub fn new(response: impl Into<String>) -> Self {
        MockBackend {
            response: response.into(),
        }
    }

    /// A response matching the built-in pick-and-place skills.
    pub fn pick_place_example() -> Self {
        MockBackend::new(
            r#"{"plan":[{"action":"Pick","object_name":"object_0","future_manipulation":"place"},{"action":"Place","place_name":"basket","careful":"true"}]}"#,
        )
    }
}

impl PlannerBackend for MockBackend {
    fn generate(&self, _request: &PlanRequest<'_>) -> Result<String, PlanError> {
        Ok(self.response.clone())
    }
}

/// Wire configuration for the HTTP adapter, from a `key = value` file with
/// keys `endpoint`, `model`, and `timeout_secs`.
#[derive(Debug, Clone, PartialEq)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
}

impl HttpBackendConfig {
    pub fn from_key_values(text: &str) -> Result<Self, PlanError> {
        let map = parse_key_values(text).map_err(|e| PlanError::BadBackendConfig(e.to_string()))?;
        let get = |key: &str| {
            map.get(key)
                .cloned()
                .ok_or_else(|| PlanError::BadBackendConfig(format!("missing key `{key}`")))
        };
        let timeout_secs: u64 = get("timeout_secs")?
            .parse()
            .map_err(|e| PlanError::BadBackendConfig(format!("timeout_secs: {e}")))?;
        Ok(HttpBackendConfig {
            endpoint: get("endpoint")?,
            model: get("model")?,
            timeout: Duration::from_secs(timeout_secs),
        })
    }
}

/// Blocking HTTP adapter: POSTs `{model, prompt, schema, frame_indices}` and
/// expects `{"response": "<structured text>"}` back.
pub struct HttpBackend {
    config: HttpBackendConfig,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        HttpBackend { config }
    }
}

impl PlannerBackend for HttpBackend {
    fn generate(&self, request: &PlanRequest<'_>) -> Result<String, PlanError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.config.timeout)
            .build()
            .map_err(|e| PlanError::Backend(e.to_string()))?;
        let body = json!({
            "model": self.config.model,
            "prompt": request.prompt,
            "schema": request.schema,
            "frame_indices": request.frame_indices,
        });
        let reply: Value = client
            .post(&self.config.endpoint)
            .json(&body)
            .send()
            .and_then(reqwest::blocking::Response::error_for_status)
            .and_then(|r| r.json())
            .map_err(|e| PlanError::Backend(e.to_string()))?;
        reply
            .get("response")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| PlanError::Backend("reply is missing a string `response` field".into()))
    }
}
