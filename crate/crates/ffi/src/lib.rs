//! C ABI over the humanfield engine.
//!
//! Every fallible function returns an [`HfStatus`]. On failure the message is
//! kept per thread and can be read with [`hf_last_error_message`]. Objects are
//! opaque handles released with their `*_free` function. Handles are not
//! thread safe; use each one from a single thread at a time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use humanfield::body::{load_body, make_toy_body, save_body, deform, BodyModel, Pose, Shape};
use humanfield::fields::{load_checkpoint, save_checkpoint, sdf_to_density, Checkpoint, FieldConfig, Generator, Template};
use humanfield::geometry::Camera;
use humanfield::math::Vec3;
use humanfield::render::{render, RenderConfig, Scene};
use humanfield::train::r1_schedule;
use humanfield::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HfStatus {
    Ok = 0,
    InvalidArgument = 1,
    DataError = 2,
    NumericError = 3,
    NullPointer = 4,
    Panic = 5,
}

/// Posable body model.
pub struct HfBody {
    model: BodyModel,
    id: u64,
}

/// Field generator with its template geometry cached per body.
pub struct HfGenerator {
    gen: Generator,
    template: RefCell<Option<(u64, Template)>>,
}

static NEXT_BODY_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(HfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidArgument(_) => HfStatus::InvalidArgument,
            Error::Data(_) | Error::Io { .. } | Error::Json(_) => HfStatus::DataError,
            Error::Numeric(_) => HfStatus::NumericError,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HfStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(HfStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any error or panic for [`hf_last_error_message`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            HfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            HfStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null(what)),
        (false, _) => Ok(std::slice::from_raw_parts(p, len)),
    }
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

unsafe fn body_ref<'a>(b: *const HfBody) -> Result<&'a HfBody, Failure> {
    b.as_ref().ok_or_else(|| null("body"))
}

unsafe fn gen_ref<'a>(g: *const HfGenerator) -> Result<&'a HfGenerator, Failure> {
    g.as_ref().ok_or_else(|| null("generator"))
}

/// Pose from `joints * 3` axis-angle values; null means the rest pose.
unsafe fn pose_arg(model: &BodyModel, theta: *const f64) -> Result<Pose, Failure> {
    let joints = model.joint_count();
    if theta.is_null() {
        return Ok(Pose::zero(joints));
    }
    let t = std::slice::from_raw_parts(theta, joints * 3);
    let pose = Pose { axis_angle: t.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(), global_translation: Vec3::zeros() };
    pose.validate(model)?;
    Ok(pose)
}

unsafe fn shape_arg(model: &BodyModel, beta: *const f64, len: usize) -> Result<Shape, Failure> {
    if beta.is_null() && len == 0 {
        return Ok(Shape::zero(model.shape_dim()));
    }
    let shape = Shape { coefficients: slice_arg(beta, len, "beta")?.to_vec() };
    shape.validate(model)?;
    Ok(shape)
}

fn boxed_body(model: BodyModel) -> *mut HfBody {
    Box::into_raw(Box::new(HfBody { model, id: NEXT_BODY_ID.fetch_add(1, Ordering::Relaxed) }))
}

fn boxed_generator(gen: Generator) -> *mut HfGenerator {
    Box::into_raw(Box::new(HfGenerator { gen, template: RefCell::new(None) }))
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes without the terminator. `buf` may be null to query
/// the length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn hf_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds the procedural toy body with `parts` in 2..=16.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn hf_body_make_toy(parts: usize, verts_per_part: usize, seed: u64, out: *mut *mut HfBody) -> HfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let model = make_toy_body(parts, verts_per_part, seed)?;
        write_out(out, boxed_body(model))
    })
}

/// Reads a body model JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn hf_body_load(path: *const c_char, out: *mut *mut HfBody) -> HfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let model = load_body(&path_arg(path)?)?;
        write_out(out, boxed_body(model))
    })
}

/// Writes the body as canonical JSON.
///
/// # Safety
/// `body` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hf_body_save(body: *const HfBody, path: *const c_char) -> HfStatus {
    guard(|| Ok(save_body(&body_ref(body)?.model, &path_arg(path)?)?))
}

/// Vertex, joint, part and shape-coefficient counts; any output may be null.
///
/// # Safety
/// `body` must come from this library; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_body_counts(
    body: *const HfBody,
    vertices: *mut usize,
    joints: *mut usize,
    parts: *mut usize,
    shape_dim: *mut usize,
) -> HfStatus {
    guard(|| {
        let m = &body_ref(body)?.model;
        for (p, v) in [(vertices, m.vertices.len()), (joints, m.joint_count()), (parts, m.part_count()), (shape_dim, m.shape_dim())] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

/// Poses the body. `theta` holds `joints * 3` axis-angle values (null for
/// the rest pose), `beta` holds `beta_len` shape coefficients (null with
/// length 0 for the mean shape). Writes `vertices * 3` coordinates.
///
/// # Safety
/// Pointers must be valid for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn hf_body_pose_vertices(
    body: *const HfBody,
    theta: *const f64,
    beta: *const f64,
    beta_len: usize,
    out_xyz: *mut f64,
) -> HfStatus {
    guard(|| {
        let m = &body_ref(body)?.model;
        let posed = deform(m, &shape_arg(m, beta, beta_len)?, &pose_arg(m, theta)?)?;
        let out = out_slice(out_xyz, m.vertices.len() * 3, "out_xyz")?;
        for (o, v) in out.chunks_exact_mut(3).zip(&posed.posed_vertices) {
            o.copy_from_slice(&[v.x, v.y, v.z]);
        }
        Ok(())
    })
}

/// Releases a body. Null is ignored.
///
/// # Safety
/// `body` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hf_body_free(body: *mut HfBody) {
    if !body.is_null() {
        drop(Box::from_raw(body));
    }
}

/// Fresh generator for a body with `parts` parts. `small` selects the narrow
/// networks; `alpha` sets the initial SDF sharpness (0 keeps the default).
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn hf_generator_new(parts: usize, small: bool, alpha: f64, seed: u64, out: *mut *mut HfGenerator) -> HfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let mut config = if small { FieldConfig::small(parts) } else { FieldConfig::new(parts) };
        if alpha != 0.0 {
            config.alpha_init = alpha;
        }
        write_out(out, boxed_generator(Generator::new(config, seed)?))
    })
}

/// Loads the generator section of a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn hf_generator_load(path: *const c_char, out: *mut *mut HfGenerator) -> HfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let gen = load_checkpoint(&path_arg(path)?)?.generator()?;
        write_out(out, boxed_generator(gen))
    })
}

/// Saves the generator as a checkpoint.
///
/// # Safety
/// `gen` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hf_generator_save(gen: *const HfGenerator, path: *const c_char) -> HfStatus {
    guard(|| Ok(save_checkpoint(&Checkpoint::from_generator(&gen_ref(gen)?.gen)?, &path_arg(path)?)?))
}

/// Latent code length.
///
/// # Safety
/// `gen` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_generator_latent_dim(gen: *const HfGenerator, out: *mut usize) -> HfStatus {
    guard(|| write_out(out, gen_ref(gen)?.gen.config.latent_dim))
}

/// Current SDF sharpness alpha.
///
/// # Safety
/// `gen` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_generator_alpha(gen: *const HfGenerator, out: *mut f64) -> HfStatus {
    guard(|| write_out(out, gen_ref(gen)?.gen.alpha()))
}

/// Releases a generator. Null is ignored.
///
/// # Safety
/// `gen` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hf_generator_free(gen: *mut HfGenerator) {
    if !gen.is_null() {
        drop(Box::from_raw(gen));
    }
}

/// Renders the body from the frontal full-body camera. `theta` and `beta`
/// follow [`hf_body_pose_vertices`]; `z` holds the latent code (null with
/// length 0 for zeros). Writes `height * width * 3` row-major colors to
/// `rgb_out` and, when non-null, `height * width` opacities to `opacity_out`.
///
/// # Safety
/// Pointers must be valid for the documented lengths.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn hf_render(
    gen: *const HfGenerator,
    body: *const HfBody,
    theta: *const f64,
    beta: *const f64,
    beta_len: usize,
    z: *const f64,
    z_len: usize,
    width: usize,
    height: usize,
    seed: u64,
    rgb_out: *mut f64,
    opacity_out: *mut f64,
) -> HfStatus {
    guard(|| {
        let g = gen_ref(gen)?;
        let b = body_ref(body)?;
        if width == 0 || height == 0 {
            return Err(invalid("image size must be positive"));
        }
        let latent = match (z.is_null(), z_len) {
            (true, 0) => vec![0.0; g.gen.config.latent_dim],
            _ => slice_arg(z, z_len, "z")?.to_vec(),
        };
        let scene = Scene {
            shape: shape_arg(&b.model, beta, beta_len)?,
            pose: pose_arg(&b.model, theta)?,
            camera: Camera::full_body(width, height),
        };
        let mut cache = g.template.borrow_mut();
        if cache.as_ref().is_none_or(|(id, _)| *id != b.id) {
            *cache = Some((b.id, Template::new(&b.model, &g.gen.config)?));
        }
        let template = &cache.as_ref().expect("template cached").1;
        let out = render(&g.gen, template, &b.model, &scene, &latent, &RenderConfig::default(), seed)?;
        out_slice(rgb_out, width * height * 3, "rgb_out")?.copy_from_slice(&out.rgb);
        if !opacity_out.is_null() {
            out_slice(opacity_out, width * height, "opacity_out")?.copy_from_slice(&out.opacity);
        }
        Ok(())
    })
}

/// R1 weight of the default schedule at iteration `iter`.
#[no_mangle]
pub extern "C" fn hf_r1_schedule(iter: u64) -> f64 {
    r1_schedule(iter)
}

/// Density for signed distance `d` at sharpness `alpha > 0`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hf_sdf_to_density(d: f64, alpha: f64, out: *mut f64) -> HfStatus {
    guard(|| {
        if !(alpha > 0.0 && alpha.is_finite()) || d.is_nan() {
            return Err(invalid(format!("alpha must be positive and finite and d a number, got alpha {alpha}, d {d}")));
        }
        write_out(out, sdf_to_density(d, alpha))
    })
}
