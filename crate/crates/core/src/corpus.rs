//! Eight-task conversational fine-tuning corpus.
//!
//! Tasks pair items, histories and visual descriptions with SIDs and titles:
//!
//! | Task | Input | Output |
//! |------|-------|--------|
//! | T1 | title | SID |
//! | T2 | SID | title |
//! | T3 | SID history | next SID |
//! | T4 | title history | next SID |
//! | T5 | SID history | next title |
//! | T6 | title history | next title |
//! | T7 | visual description | SID |
//! | T8 | visual description | title |
//!
//! Instructions and user templates live in `assets/tasks/t1.txt` … `t8.txt`.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::datamodel::{ItemCatalog, SplitDataset};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::rq::{render_token, RqModel, SidAssignment};

pub const DEFAULT_MAX_HISTORY: usize = 20;
pub const HISTORY_SEPARATOR: &str = ", ";

const IM_START: &str = "<|im_start|>";
const IM_END: &str = "<|im_end|>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskId {
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
    T8,
}

const ASSETS: [&str; 8] = [
    include_str!("../assets/tasks/t1.txt"),
    include_str!("../assets/tasks/t2.txt"),
    include_str!("../assets/tasks/t3.txt"),
    include_str!("../assets/tasks/t4.txt"),
    include_str!("../assets/tasks/t5.txt"),
    include_str!("../assets/tasks/t6.txt"),
    include_str!("../assets/tasks/t7.txt"),
    include_str!("../assets/tasks/t8.txt"),
];

impl TaskId {
    pub const ALL: [TaskId; 8] = [
        TaskId::T1,
        TaskId::T2,
        TaskId::T3,
        TaskId::T4,
        TaskId::T5,
        TaskId::T6,
        TaskId::T7,
        TaskId::T8,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        ["T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8"][self.index()]
    }

    pub fn from_code(code: &str) -> Option<TaskId> {
        TaskId::ALL.into_iter().find(|t| t.code() == code)
    }

    pub fn name(self) -> &'static str {
        [
            "Title→SID",
            "SID→Title",
            "SID→SID",
            "Title→SID (history)",
            "SID→Title (history)",
            "Title→Title",
            "VisDesc→SID",
            "VisDesc→Title",
        ][self.index()]
    }

    /// Whether the assistant output is a SID rather than a title.
    pub fn produces_sid(self) -> bool {
        matches!(self, TaskId::T1 | TaskId::T3 | TaskId::T4 | TaskId::T7)
    }

    /// Raw asset text for this task.
    pub fn asset(self) -> &'static str {
        ASSETS[self.index()]
    }

    pub fn template(self) -> TaskTemplate {
        TaskTemplate::parse(self.asset()).expect("bundled task assets are well formed")
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl Serialize for TaskId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for TaskId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let code = String::deserialize(d)?;
        TaskId::from_code(&code).ok_or_else(|| serde::de::Error::custom(format!("unknown task {code:?}")))
    }
}

/// A system instruction plus a user template with `{placeholder}` fields.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskTemplate {
    pub system: String,
    pub user: String,
}

impl TaskTemplate {
    /// Parses `System: …` on the first line and `User: …` on the rest.
    pub fn parse(text: &str) -> Result<TaskTemplate> {
        let text = text.strip_suffix('\n').unwrap_or(text);
        let (first, rest) = text
            .split_once('\n')
            .ok_or_else(|| Error::Template("expected a System line and a User block".into()))?;
        let system = first
            .strip_prefix("System: ")
            .ok_or_else(|| Error::Template("first line must start with 'System: '".into()))?;
        let user = rest
            .strip_prefix("User: ")
            .ok_or_else(|| Error::Template("second line must start with 'User: '".into()))?;
        Ok(TaskTemplate {
            system: system.to_owned(),
            user: user.to_owned(),
        })
    }

    /// Substitutes the single `{name}` placeholder of the user template.
    pub fn fill(&self, value: &str) -> Result<String> {
        let open = self.user.find('{');
        let close = self.user.find('}');
        match (open, close) {
            (Some(o), Some(c)) if o < c && self.user[c + 1..].find('{').is_none() => {
                Ok(format!("{}{}{}", &self.user[..o], value, &self.user[c + 1..]))
            }
            _ => Err(Error::Template(format!(
                "user template {:?} must contain exactly one placeholder",
                self.user
            ))),
        }
    }
}

/// One training example before rendering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingExample {
    pub task: TaskId,
    pub system_instruction: String,
    pub user_input: String,
    pub target_output: String,
    /// Item id for item-level tasks, user id for history tasks.
    pub provenance: String,
}

impl TrainingExample {
    /// Builds an example from the task's template and a field value.
    pub fn from_fields(task: TaskId, value: &str, target: &str, provenance: &str) -> Result<Self> {
        if value.trim().is_empty() {
            return Err(Error::Template(format!("{task} input field is empty")));
        }
        let template = task.template();
        let ex = TrainingExample {
            task,
            system_instruction: template.system.clone(),
            user_input: template.fill(value)?,
            target_output: target.to_owned(),
            provenance: provenance.to_owned(),
        };
        ex.validate()?;
        Ok(ex)
    }

    fn validate(&self) -> Result<()> {
        for (what, text) in [
            ("system", &self.system_instruction),
            ("user", &self.user_input),
            ("assistant", &self.target_output),
        ] {
            if text.trim().is_empty() {
                return Err(Error::Template(format!("{what} text is empty")));
            }
            if text.contains(IM_START) || text.contains(IM_END) {
                return Err(Error::Template(format!("{what} text contains a role delimiter")));
            }
        }
        Ok(())
    }
}

/// Renders the chat layout: three role blocks, each delimiter and content
/// on its own line.
///
/// ```
/// use sidforge::corpus::{parse_template, render_template, TaskId, TrainingExample};
///
/// let ex = TrainingExample::from_fields(TaskId::T1, "Final Fantasy VIII", "<a_195><b_133>", "i1").unwrap();
/// let text = render_template(&ex);
/// assert!(text.ends_with("<|im_start|>assistant\n<a_195><b_133>\n<|im_end|>"));
/// let (system, user, assistant) = parse_template(&text).unwrap();
/// assert_eq!(user, "Product Title: Final Fantasy VIII\nGenerate the SID sequence:");
/// assert_eq!((system.as_str(), assistant.as_str()), (ex.system_instruction.as_str(), "<a_195><b_133>"));
/// ```
pub fn render_template(ex: &TrainingExample) -> String {
    render_chat(&ex.system_instruction, &ex.user_input, &ex.target_output)
}

fn render_chat(system: &str, user: &str, assistant: &str) -> String {
    format!(
        "{IM_START}system\n{system}\n{IM_END}\n{IM_START}user\n{user}\n{IM_END}\n{IM_START}assistant\n{assistant}\n{IM_END}"
    )
}

/// Inverse of [`render_template`]: returns `(system, user, assistant)`.
pub fn parse_template(text: &str) -> Result<(String, String, String)> {
    let bad = |m: &str| Error::Template(format!("malformed chat record: {m}"));
    let body = text
        .strip_prefix(&format!("{IM_START}system\n"))
        .ok_or_else(|| bad("missing system opening"))?;
    let body = body
        .strip_suffix(&format!("\n{IM_END}"))
        .ok_or_else(|| bad("missing final end marker"))?;
    let user_sep = format!("\n{IM_END}\n{IM_START}user\n");
    let asst_sep = format!("\n{IM_END}\n{IM_START}assistant\n");
    let (system, rest) = body.split_once(&user_sep).ok_or_else(|| bad("missing user block"))?;
    let (user, assistant) = rest.split_once(&asst_sep).ok_or_else(|| bad("missing assistant block"))?;
    for part in [system, user, assistant] {
        if part.contains(IM_START) || part.contains(IM_END) {
            return Err(bad("unexpected delimiter inside a block"));
        }
    }
    Ok((system.to_owned(), user.to_owned(), assistant.to_owned()))
}

/// Examples for one task plus how many candidates were skipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExampleSet {
    pub examples: Vec<TrainingExample>,
    pub skipped: usize,
}

/// Builds every example of `task`. Item tasks follow the assignment order;
/// history tasks follow the split's user order and target the validation item.
pub fn make_examples(
    task: TaskId,
    split: &SplitDataset,
    catalog: &ItemCatalog,
    assign: &SidAssignment,
    max_history: usize,
) -> Result<ExampleSet> {
    let item = |id: &str| catalog.get(id).ok_or_else(|| Error::UnknownItem(id.to_owned()));
    let sid = |id: &str| {
        assign
            .get(id)
            .map(|s| s.render())
            .ok_or_else(|| Error::UnknownItem(id.to_owned()))
    };
    let mut set = ExampleSet::default();
    match task {
        TaskId::T1 | TaskId::T2 | TaskId::T7 | TaskId::T8 => {
            for (id, s) in assign.iter() {
                let it = item(id)?;
                let sid = s.render();
                let ex = match task {
                    TaskId::T1 => TrainingExample::from_fields(task, &it.title, &sid, id)?,
                    TaskId::T2 => TrainingExample::from_fields(task, &sid, &it.title, id)?,
                    _ => match it.visual_description.as_deref().filter(|v| !v.trim().is_empty()) {
                        None => {
                            set.skipped += 1;
                            continue;
                        }
                        Some(v) if task == TaskId::T7 => TrainingExample::from_fields(task, v, &sid, id)?,
                        Some(v) => TrainingExample::from_fields(task, v, &it.title, id)?,
                    },
                };
                set.examples.push(ex);
            }
        }
        _ => {
            let sid_input = matches!(task, TaskId::T3 | TaskId::T5);
            for user in &split.users {
                if user.train.is_empty() {
                    set.skipped += 1;
                    continue;
                }
                let start = user.train.len().saturating_sub(max_history.max(1));
                let history = user.train[start..]
                    .iter()
                    .map(|id| if sid_input { sid(id) } else { item(id).map(|i| i.title.clone()) })
                    .collect::<Result<Vec<_>>>()?
                    .join(HISTORY_SEPARATOR);
                let target = if task.produces_sid() {
                    sid(&user.validation)?
                } else {
                    item(&user.validation)?.title.clone()
                };
                set.examples
                    .push(TrainingExample::from_fields(task, &history, &target, &user.user_id)?);
            }
        }
    }
    Ok(set)
}

/// Example pools for all eight tasks, indexed by [`TaskId::index`].
pub fn build_pools(
    split: &SplitDataset,
    catalog: &ItemCatalog,
    assign: &SidAssignment,
    max_history: usize,
) -> Result<Vec<ExampleSet>> {
    TaskId::ALL
        .iter()
        .map(|&t| make_examples(t, split, catalog, assign, max_history))
        .collect()
}

/// One line of the JSONL corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub task: TaskId,
    pub system: String,
    pub user: String,
    pub assistant: String,
}

impl CorpusRecord {
    pub fn chat_text(&self) -> String {
        render_chat(&self.system, &self.user, &self.assistant)
    }
}

/// Draws `n` records: a task uniformly among those with examples, then an
/// example uniformly with replacement. Tasks without examples are left out
/// with a warning.
pub fn sample_corpus(pools: &[ExampleSet], n: usize, seed: u64) -> Result<Vec<CorpusRecord>> {
    if n == 0 {
        return Err(Error::Config("corpus size must be at least 1".into()));
    }
    let active: Vec<usize> = (0..pools.len()).filter(|&t| !pools[t].examples.is_empty()).collect();
    if active.is_empty() {
        return Err(Error::NoExamples);
    }
    for (t, pool) in pools.iter().enumerate() {
        if pool.examples.is_empty() {
            log::warn!(
                "task {} has no examples and is excluded; sampling is renormalized over {} tasks",
                TaskId::ALL[t],
                active.len()
            );
        }
    }
    let mut rng = rng::stream(seed, Purpose::Corpus, 0);
    Ok((0..n)
        .map(|_| {
            let pool = &pools[active[rng.random_range(0..active.len())]].examples;
            let ex = &pool[rng.random_range(0..pool.len())];
            CorpusRecord {
                task: ex.task,
                system: ex.system_instruction.clone(),
                user: ex.user_input.clone(),
                assistant: ex.target_output.clone(),
            }
        })
        .collect())
}

pub fn corpus_to_jsonl(records: &[CorpusRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_corpus(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, corpus_to_jsonl(records)?).map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Raw chat export: rendered records separated by blank lines.
pub fn save_chat_text(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in records {
        writeln!(file, "{}\n", r.chat_text()).map_err(|e| Error::io(path, e))?;
    }
    file.flush().map_err(|e| Error::io(path, e))
}

/// Every SID token the model can emit, level by level, for adding to a
/// tokenizer vocabulary.
pub fn sid_vocabulary(model: &RqModel) -> Vec<String> {
    model
        .sizes()
        .iter()
        .enumerate()
        .flat_map(|(level, &k)| (0..k as u32).map(move |t| render_token(level, t)))
        .collect()
}

pub fn save_vocabulary(path: impl AsRef<Path>, model: &RqModel) -> Result<()> {
    let path = path.as_ref();
    let mut text = sid_vocabulary(model).join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-task counts of a sampled corpus.
pub fn task_counts(records: &[CorpusRecord]) -> [usize; 8] {
    let mut counts = [0; 8];
    for r in records {
        counts[r.task.index()] += 1;
    }
    counts
}

/// Tasks present in a set of pools.
pub fn active_tasks(pools: &[ExampleSet]) -> HashSet<TaskId> {
    TaskId::ALL
        .into_iter()
        .filter(|t| pools.get(t.index()).is_some_and(|p| !p.examples.is_empty()))
        .collect()
}
