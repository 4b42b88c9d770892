use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use super::{
    persona_tag, BackendError, ChatBackend, ChatMessage, ChatRequest, ConversationScript, Exchange,
    Injection, Role, Transcript, TranscriptRecord, TranscriptWriter,
};
use crate::drift::{Baseline, DriftMonitor, DriftPolicy, ReinjectMode};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::persona::{PersonaSpec, PromptConfig};

/// Drift monitoring for a run. Baselines are keyed by persona id and are
/// required for every persona when the policy re-injects on drift.
#[derive(Debug, Clone)]
pub struct DriftSetup {
    pub policy: DriftPolicy,
    pub baselines: BTreeMap<String, Baseline>,
    pub lexicon: Lexicon,
}

#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    /// Send only the system prompt and the current donor utterance each turn.
    pub reset_per_turn: bool,
    pub drift: Option<DriftSetup>,
}

#[derive(Debug, thiserror::Error)]
#[error("session {persona_id}#{session_index} on {model_id} failed after {completed} exchanges: {cause}", persona_id = .partial.persona_id, session_index = .partial.session_index, model_id = .partial.model_id, completed = .partial.exchanges.len())]
pub struct SessionError {
    pub partial: Transcript,
    pub cause: Error,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Runs one scripted conversation.
///
/// The context starts with the tagged system prompt and accumulates donor
/// and agent messages in order. Re-injected persona text is appended as a
/// system message after the turn that triggered it; nothing already in the
/// history is modified. No injection is made after the final turn.
pub fn run_session(
    persona: &PersonaSpec,
    prompts: &PromptConfig,
    script: &ConversationScript,
    backend: &dyn ChatBackend,
    session_index: usize,
    seed: u64,
    options: &SessionOptions,
) -> std::result::Result<Transcript, SessionError> {
    let persona_id = persona.id();
    let mut transcript = Transcript {
        persona_id: persona_id.clone(),
        model_id: backend.model_id().to_string(),
        session_index,
        seed,
        exchanges: Vec::with_capacity(script.len()),
        injections: Vec::new(),
        drift: Vec::new(),
    };
    let fail = |partial: Transcript, cause: Error| SessionError { partial, cause };

    let rendered = match prompts.render(persona) {
        Ok(r) => r,
        Err(e) => return Err(fail(transcript, e)),
    };
    let system = ChatMessage::new(
        Role::System,
        format!("{}\n{}", persona_tag(&persona_id), rendered.text),
        0,
    );

    let mut monitor = match &options.drift {
        Some(setup) => {
            let baseline = setup.baselines.get(&persona_id);
            if setup.policy.reinject == ReinjectMode::OnDrift && baseline.is_none() {
                let e = Error::Config(format!("no drift baseline for persona {persona_id}"));
                return Err(fail(transcript, e));
            }
            Some(DriftMonitor::new(setup.policy, baseline, &setup.lexicon))
        }
        None => None,
    };

    let mut history = vec![system.clone()];
    for (i, utterance) in script.utterances().iter().enumerate() {
        let turn = i + 1;
        let donor = ChatMessage::new(Role::Donor, utterance.clone(), turn);
        history.push(donor.clone());
        let reset_context;
        let messages: &[ChatMessage] = if options.reset_per_turn {
            reset_context = [system.clone(), donor];
            &reset_context
        } else {
            &history
        };
        let response = match backend.complete(ChatRequest { messages, seed }) {
            Ok(r) => r,
            Err(e) => return Err(fail(transcript, Error::Backend(e))),
        };
        if response.trim().is_empty() {
            let e = BackendError::BadResponse(format!("empty response at turn {turn}"));
            return Err(fail(transcript, Error::Backend(e)));
        }
        history.push(ChatMessage::new(Role::Agent, response.clone(), turn));
        transcript.exchanges.push(Exchange {
            donor: utterance.clone(),
            agent: response,
        });

        if let Some(monitor) = monitor.as_mut() {
            let agent_text = &transcript.exchanges[i].agent;
            let (report, injection) =
                match monitor.observe(turn, agent_text, &rendered.persona_section) {
                    Ok(x) => x,
                    Err(e) => return Err(fail(transcript, e)),
                };
            if let Some(r) = report {
                transcript.drift.push(r);
            }
            if let Some(text) = injection.filter(|_| turn < script.len()) {
                history.push(ChatMessage::new(Role::System, text.clone(), turn));
                transcript.injections.push(Injection { turn, text });
            }
        }
    }
    Ok(transcript)
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-session seed, a pure function of the campaign seed, model id,
/// persona id and session index.
pub fn derive_session_seed(
    campaign_seed: u64,
    model_id: &str,
    persona_id: &str,
    session_index: usize,
) -> u64 {
    // FNV-1a keeps the string hash stable across builds and platforms.
    let fnv = |s: &str| {
        s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        })
    };
    let mut h = mix(campaign_seed);
    h = mix(h ^ fnv(model_id));
    h = mix(h ^ fnv(persona_id));
    mix(h ^ session_index as u64)
}

pub struct CampaignPlan<'a> {
    pub personas: &'a [PersonaSpec],
    pub prompts: &'a PromptConfig,
    pub script: &'a ConversationScript,
    pub sessions_per_persona: usize,
    pub seed: u64,
    pub parallel: usize,
    pub options: SessionOptions,
}

pub type SessionOutcome = std::result::Result<Transcript, SessionError>;

/// Runs every persona × session against one backend.
///
/// Outcomes come back in persona order, then session order, regardless of
/// how sessions were scheduled. Failed sessions are reported individually.
/// When a writer is given, each session's record is appended as soon as it
/// finishes.
pub fn run_campaign(
    plan: &CampaignPlan<'_>,
    backend: &dyn ChatBackend,
    writer: Option<&TranscriptWriter>,
) -> Result<Vec<SessionOutcome>> {
    if plan.personas.is_empty() {
        return Err(Error::InvalidArgument("campaign has no personas".into()));
    }
    if plan.sessions_per_persona == 0 {
        return Err(Error::InvalidArgument(
            "sessions per persona must be >= 1".into(),
        ));
    }
    if let Some(d) = &plan.options.drift {
        d.policy.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..plan.personas.len())
        .flat_map(|p| (0..plan.sessions_per_persona).map(move |s| (p, s)))
        .collect();
    let slots: Vec<Mutex<Option<SessionOutcome>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let write_error: Mutex<Option<Error>> = Mutex::new(None);

    let worker = || loop {
        let j = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(p, s)) = jobs.get(j) else { break };
        let persona = &plan.personas[p];
        let seed = derive_session_seed(plan.seed, backend.model_id(), &persona.id(), s);
        let started = writer.map_or(0, |_| now_ms());
        let outcome = run_session(
            persona,
            plan.prompts,
            plan.script,
            backend,
            s,
            seed,
            &plan.options,
        );
        if let Some(w) = writer {
            let record = match &outcome {
                Ok(t) => TranscriptRecord {
                    transcript: t.clone(),
                    started_at_ms: started,
                    finished_at_ms: now_ms(),
                    error: None,
                },
                Err(e) => TranscriptRecord {
                    transcript: e.partial.clone(),
                    started_at_ms: started,
                    finished_at_ms: now_ms(),
                    error: Some(e.cause.to_string()),
                },
            };
            if let Err(e) = w.write(&record) {
                write_error.lock().unwrap().get_or_insert(e);
            }
        }
        *slots[j].lock().unwrap() = Some(outcome);
    };

    let threads = plan.parallel.clamp(1, jobs.len());
    if threads == 1 {
        worker();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(worker);
            }
        });
    }
    if let Some(e) = write_error.into_inner().unwrap() {
        return Err(e);
    }
    Ok(slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every job ran"))
        .collect())
}
