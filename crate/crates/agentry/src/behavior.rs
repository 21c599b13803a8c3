//! Behaviors: the actions, control loops and lifecycle hooks of an agent,
//! together with the state they operate on.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::num::NonZeroUsize;
use std::ops::Deref;
use std::sync::Arc;
use std::time::Duration;

use agentry_core::{BehaviorSpec, Payload, SpecError};
use parking_lot::ReentrantMutex;

use crate::runtime::AgentControl;

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

/// How a control loop is driven.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoopKind {
    /// Called once; runs until it returns. Long-running loops should watch
    /// [`AgentControl::is_shutting_down`] or [`AgentControl::wait_shutdown`].
    Plain,
    /// Called every interval until shutdown.
    Timer(Duration),
    /// Called once per [`AgentControl::fire_event`] of the named event.
    Event(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BehaviorError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("{0:?} is defined more than once")]
    Duplicate(String),
    #[error("timer loop {0:?} has a zero interval")]
    ZeroInterval(String),
    #[error("event name {0:?} is not an identifier")]
    BadEvent(String),
}

/// View of the agent handed to every action, loop and hook.
pub struct Ctx<S> {
    state: Arc<ReentrantMutex<RefCell<S>>>,
    control: Arc<AgentControl>,
}

impl<S> Clone for Ctx<S> {
    fn clone(&self) -> Self {
        Self {
            state: self.state.clone(),
            control: self.control.clone(),
        }
    }
}

impl<S> Ctx<S> {
    /// Runs `f` with exclusive access to the agent's state. The guard is
    /// held only for the duration of `f`; calling `with_state` again from
    /// inside `f` panics.
    pub fn with_state<R>(&self, f: impl FnOnce(&mut S) -> R) -> R {
        let guard = self.state.lock();
        let mut s = guard
            .try_borrow_mut()
            .expect("with_state called while the state is already borrowed");
        f(&mut s)
    }

    pub fn control(&self) -> &Arc<AgentControl> {
        &self.control
    }
}

impl<S> Deref for Ctx<S> {
    type Target = AgentControl;

    fn deref(&self) -> &AgentControl {
        &self.control
    }
}

type ActionFn<S> = Arc<dyn Fn(&Ctx<S>, Payload) -> Result<Payload, BoxError> + Send + Sync>;
type LoopFn<S> = Arc<dyn Fn(&Ctx<S>) -> Result<(), BoxError> + Send + Sync>;
type HookFn<S> = Box<dyn FnOnce(&Ctx<S>) -> Result<(), BoxError> + Send>;

pub(crate) type ErasedAction = Arc<dyn Fn(Payload) -> Result<Payload, BoxError> + Send + Sync>;
pub(crate) type ErasedLoop = Arc<dyn Fn() -> Result<(), BoxError> + Send + Sync>;
pub(crate) type ErasedHook = Box<dyn FnOnce() -> Result<(), BoxError> + Send>;

/// Builder for an agent's behavior over state `S`.
pub struct Behavior<S> {
    name: String,
    parents: Vec<String>,
    state: S,
    actions: Vec<(String, ActionFn<S>)>,
    loops: Vec<(String, LoopKind, LoopFn<S>)>,
    on_setup: Option<HookFn<S>>,
    on_shutdown: Option<HookFn<S>>,
    max_concurrency: Option<NonZeroUsize>,
}

impl<S: Send + 'static> Behavior<S> {
    pub fn new(name: &str, state: S) -> Self {
        Self {
            name: name.to_string(),
            parents: Vec::new(),
            state,
            actions: Vec::new(),
            loops: Vec::new(),
            on_setup: None,
            on_shutdown: None,
            max_concurrency: None,
        }
    }

    /// Ancestors used for discovery, nearest first.
    pub fn extends<I, T>(mut self, parents: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        self.parents.extend(parents.into_iter().map(Into::into));
        self
    }

    pub fn action<F>(mut self, name: &str, f: F) -> Self
    where
        F: Fn(&Ctx<S>, Payload) -> Result<Payload, BoxError> + Send + Sync + 'static,
    {
        self.actions.push((name.to_string(), Arc::new(f)));
        self
    }

    /// Action over plain bytes: references in the argument are resolved and
    /// large results are returned by reference.
    pub fn action_bytes<F>(self, name: &str, f: F) -> Self
    where
        F: Fn(&Ctx<S>, &[u8]) -> Result<Vec<u8>, BoxError> + Send + Sync + 'static,
    {
        self.action(name, move |ctx, payload| {
            let args = ctx.resolve(payload)?;
            let out = f(ctx, &args)?;
            Ok(ctx.payload(out)?)
        })
    }

    pub fn control_loop<F>(mut self, name: &str, kind: LoopKind, f: F) -> Self
    where
        F: Fn(&Ctx<S>) -> Result<(), BoxError> + Send + Sync + 'static,
    {
        self.loops.push((name.to_string(), kind, Arc::new(f)));
        self
    }

    pub fn on_setup<F>(mut self, f: F) -> Self
    where
        F: FnOnce(&Ctx<S>) -> Result<(), BoxError> + Send + 'static,
    {
        self.on_setup = Some(Box::new(f));
        self
    }

    pub fn on_shutdown<F>(mut self, f: F) -> Self
    where
        F: FnOnce(&Ctx<S>) -> Result<(), BoxError> + Send + 'static,
    {
        self.on_shutdown = Some(Box::new(f));
        self
    }

    /// Upper bound on simultaneously executing actions.
    pub fn max_concurrency(mut self, n: usize) -> Self {
        self.max_concurrency = NonZeroUsize::new(n);
        self
    }

    pub fn build(self) -> Result<AgentBehavior, BehaviorError> {
        let mut seen = HashSet::new();
        let names = self
            .actions
            .iter()
            .map(|(n, _)| n)
            .chain(self.loops.iter().map(|(n, _, _)| n));
        for n in names {
            if !seen.insert(n.clone()) {
                return Err(BehaviorError::Duplicate(n.clone()));
            }
        }
        let mut events = Vec::new();
        for (name, kind, _) in &self.loops {
            match kind {
                LoopKind::Timer(iv) if iv.is_zero() => {
                    return Err(BehaviorError::ZeroInterval(name.clone()))
                }
                LoopKind::Event(ev) => {
                    let ok = ev.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_')
                        && ev.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
                    if !ok {
                        return Err(BehaviorError::BadEvent(ev.clone()));
                    }
                    events.push(ev.clone());
                }
                _ => {}
            }
        }
        let spec = BehaviorSpec::new(
            &self.name,
            self.parents.iter().cloned(),
            self.actions.iter().map(|(n, _)| n.clone()),
            self.loops.iter().map(|(n, _, _)| n.clone()),
            self.max_concurrency,
        )?;
        let Behavior {
            state,
            actions,
            loops,
            on_setup,
            on_shutdown,
            ..
        } = self;
        let bind = move |control: Arc<AgentControl>| {
            let ctx = Ctx {
                state: Arc::new(ReentrantMutex::new(RefCell::new(state))),
                control,
            };
            let hook = |h: Option<HookFn<S>>| -> Option<ErasedHook> {
                h.map(|h| {
                    let ctx = ctx.clone();
                    Box::new(move || h(&ctx)) as ErasedHook
                })
            };
            let setup = hook(on_setup);
            let shutdown = hook(on_shutdown);
            let actions = actions
                .into_iter()
                .map(|(name, f)| {
                    let ctx = ctx.clone();
                    let erased: ErasedAction = Arc::new(move |p| f(&ctx, p));
                    (name, erased)
                })
                .collect();
            let loops = loops
                .into_iter()
                .map(|(name, kind, f)| {
                    let ctx = ctx.clone();
                    let erased: ErasedLoop = Arc::new(move || f(&ctx));
                    (name, kind, erased)
                })
                .collect();
            Bound {
                setup,
                shutdown,
                actions,
                loops,
            }
        };
        Ok(AgentBehavior {
            spec,
            events,
            bind: Box::new(bind),
        })
    }
}

pub(crate) struct Bound {
    pub setup: Option<ErasedHook>,
    pub shutdown: Option<ErasedHook>,
    pub actions: HashMap<String, ErasedAction>,
    pub loops: Vec<(String, LoopKind, ErasedLoop)>,
}

/// A validated behavior ready to run, with its state type erased.
pub struct AgentBehavior {
    spec: BehaviorSpec,
    events: Vec<String>,
    bind: Box<dyn FnOnce(Arc<AgentControl>) -> Bound + Send>,
}

impl std::fmt::Debug for AgentBehavior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentBehavior").field("spec", &self.spec).finish()
    }
}

impl AgentBehavior {
    pub fn spec(&self) -> &BehaviorSpec {
        &self.spec
    }

    pub(crate) fn events(&self) -> &[String] {
        &self.events
    }

    pub(crate) fn bind(self, control: Arc<AgentControl>) -> Bound {
        (self.bind)(control)
    }
}
