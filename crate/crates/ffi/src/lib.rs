//! C ABI over the smal library.
//!
//! Models and worlds are opaque handles created by `*_load`/`*_parse` and
//! released with the matching `*_free`. Every fallible function returns a
//! [`SmalStatus`]; on failure [`smal_last_error`] describes the error of the
//! most recent failed call on the calling thread. Outputs are written only
//! on success. Panics never cross the boundary: they become
//! `SMAL_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use smal::features::Frame;
use smal::mdp::AtomMovement;
use smal::pipeline::{load_model, PolicyController, TrainedModel};
use smal::sim::{run_episode, Heading, SimWorld};
use smal::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Corrupt = 4,
    VersionMismatch = 5,
    InvalidModel = 6,
    WorldFormat = 7,
    NoPath = 8,
    Numeric = 9,
    Internal = 10,
}

/// Primitive motions, in wire order.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmalAtom {
    Forward = 0,
    Backward = 1,
    TurnLeft = 2,
    TurnRight = 3,
}

/// Robot pose; `heading` is 0 = N, 1 = E, 2 = S, 3 = W.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SmalPose {
    pub x: usize,
    pub y: usize,
    pub heading: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SmalEpisode {
    pub success: bool,
    pub steps: usize,
    pub ticks: usize,
    pub collisions: usize,
}

/// Trained model handle.
pub struct SmalModel {
    inner: TrainedModel,
}

/// Simulated world handle.
pub struct SmalWorld {
    inner: SimWorld,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SmalStatus {
    match e {
        Error::InvalidArgument(_) | Error::Precondition(_) | Error::UnknownState(_) => SmalStatus::InvalidArgument,
        Error::Io(_) => SmalStatus::Io,
        Error::Corrupt { .. } | Error::Json(_) | Error::Image(_) => SmalStatus::Corrupt,
        Error::VersionMismatch { .. } => SmalStatus::VersionMismatch,
        Error::InvalidModel(_) => SmalStatus::InvalidModel,
        Error::WorldFormat(_) => SmalStatus::WorldFormat,
        Error::NoPath => SmalStatus::NoPath,
        Error::Numeric { .. } | Error::Lp(_) => SmalStatus::Numeric,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SmalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SmalStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(&format!("{what} is null"));
            SmalStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal error");
            SmalStatus::Internal
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    Ok(PathBuf::from(str_arg(p, "path")?))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Lib(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn smal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or "" if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn smal_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a model file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn smal_model_load(path: *const c_char, out: *mut *mut SmalModel) -> SmalStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        let inner = load_model(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SmalModel { inner }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`smal_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn smal_model_free(model: *mut SmalModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of learned states.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smal_model_num_states(model: *const SmalModel, out: *mut usize) -> SmalStatus {
    guard(|| {
        let n = borrow(model, "model")?.inner.num_states();
        *borrow_mut(out, "out")? = n;
        Ok(())
    })
}

/// Number of learned actions.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smal_model_num_actions(model: *const SmalModel, out: *mut usize) -> SmalStatus {
    guard(|| {
        let n = borrow(model, "model")?.inner.actions().len();
        *borrow_mut(out, "out")? = n;
        Ok(())
    })
}

/// Frames per observation window.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smal_model_seq_len(model: *const SmalModel, out: *mut usize) -> SmalStatus {
    guard(|| {
        let n = borrow(model, "model")?.inner.seq_len();
        *borrow_mut(out, "out")? = n;
        Ok(())
    })
}

/// Identifies the state of a window of `frames` RGB8 images of
/// `width` x `height` pixels stored back to back in `rgb`.
///
/// # Safety
/// `rgb` must point to `frames * width * height * 3` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn smal_model_identify(
    model: *const SmalModel,
    rgb: *const u8,
    width: usize,
    height: usize,
    frames: usize,
    state_out: *mut usize,
) -> SmalStatus {
    guard(|| {
        let model = &borrow(model, "model")?.inner;
        if rgb.is_null() {
            return Err(Failure::Null("rgb"));
        }
        let frame_len = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| Error::InvalidArgument("frame size overflows".into()))?;
        let total = frame_len
            .checked_mul(frames)
            .ok_or_else(|| Error::InvalidArgument("window size overflows".into()))?;
        let bytes = std::slice::from_raw_parts(rgb, total);
        let window = bytes
            .chunks_exact(frame_len.max(1))
            .take(frames)
            .map(|c| Frame::from_rgb8(width, height, c))
            .collect::<Result<Vec<_>, _>>()?;
        let (state, _) = model.identify(&window)?;
        *borrow_mut(state_out, "state_out")? = state;
        Ok(())
    })
}

/// Loads a world file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn smal_world_load(path: *const c_char, out: *mut *mut SmalWorld) -> SmalStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        let inner = SimWorld::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SmalWorld { inner }));
        Ok(())
    })
}

/// Parses world text into `*out`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn smal_world_parse(text: *const c_char, out: *mut *mut SmalWorld) -> SmalStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        let inner = SimWorld::parse(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(SmalWorld { inner }));
        Ok(())
    })
}

/// Releases a world; null is ignored.
///
/// # Safety
/// `world` must come from a world constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn smal_world_free(world: *mut SmalWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Puts the robot back at the start pose and clears the counters.
///
/// # Safety
/// `world` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn smal_world_reset(world: *mut SmalWorld) -> SmalStatus {
    guard(|| {
        borrow_mut(world, "world")?.inner.reset();
        Ok(())
    })
}

/// Applies one atom, a [`SmalAtom`] value.
///
/// # Safety
/// `world` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn smal_world_step(world: *mut SmalWorld, atom: u32) -> SmalStatus {
    guard(|| {
        let atom = match atom {
            a if a == SmalAtom::Forward as u32 => AtomMovement::Forward,
            a if a == SmalAtom::Backward as u32 => AtomMovement::Backward,
            a if a == SmalAtom::TurnLeft as u32 => AtomMovement::TurnLeft,
            a if a == SmalAtom::TurnRight as u32 => AtomMovement::TurnRight,
            other => return Err(Error::InvalidArgument(format!("atom {other} is not 0..=3")).into()),
        };
        borrow_mut(world, "world")?.inner.step(atom);
        Ok(())
    })
}

/// Current robot pose.
///
/// # Safety
/// `world` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smal_world_pose(world: *const SmalWorld, out: *mut SmalPose) -> SmalStatus {
    guard(|| {
        let p = borrow(world, "world")?.inner.robot;
        *borrow_mut(out, "out")? = SmalPose { x: p.x, y: p.y, heading: p.heading.index() as u32 };
        Ok(())
    })
}

/// Moves the start pose (and the robot) to `pose`.
///
/// # Safety
/// `world` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn smal_world_set_start(world: *mut SmalWorld, pose: SmalPose) -> SmalStatus {
    guard(|| {
        let w = borrow_mut(world, "world")?;
        let heading = *Heading::ALL
            .get(pose.heading as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("heading {} is not 0..=3", pose.heading)))?;
        w.inner = w.inner.clone().with_start(smal::sim::Pose::new(pose.x, pose.y, heading))?;
        Ok(())
    })
}

/// Whether the robot stands on the victim cell.
///
/// # Safety
/// `world` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smal_world_at_victim(world: *const SmalWorld, out: *mut bool) -> SmalStatus {
    guard(|| {
        let v = borrow(world, "world")?.inner.at_victim();
        *borrow_mut(out, "out")? = v;
        Ok(())
    })
}

/// Runs the model's policy in `world` from its current pose for at most
/// `budget` ticks.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smal_run_episode(
    model: *const SmalModel,
    world: *mut SmalWorld,
    budget: usize,
    out: *mut SmalEpisode,
) -> SmalStatus {
    guard(|| {
        let model = &borrow(model, "model")?.inner;
        let world = &mut borrow_mut(world, "world")?.inner;
        let out = borrow_mut(out, "out")?;
        let mut controller = PolicyController::new(model);
        let r = run_episode(world, &mut controller, budget)?;
        *out = SmalEpisode { success: r.success, steps: r.steps, ticks: r.ticks, collisions: r.collision_count };
        Ok(())
    })
}
