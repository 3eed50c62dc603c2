use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place unscaled 2-D transform of a row-major `rows x cols` buffer.
pub(crate) fn fft2_in_place(buf: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), rows * cols);
    if cols > 1 {
        let row_fft = plan(cols, inverse);
        let mut scratch = vec![Complex64::default(); row_fft.get_inplace_scratch_len()];
        row_fft.process_with_scratch(buf, &mut scratch);
    }
    if rows > 1 {
        let col_fft = plan(rows, inverse);
        let mut scratch = vec![Complex64::default(); col_fft.get_inplace_scratch_len()];
        let mut column = vec![Complex64::default(); rows];
        for c in 0..cols {
            for r in 0..rows {
                column[r] = buf[r * cols + c];
            }
            col_fft.process_with_scratch(&mut column, &mut scratch);
            for r in 0..rows {
                buf[r * cols + c] = column[r];
            }
        }
    }
}

/// In-place unscaled 1-D transform.
pub(crate) fn fft1_in_place(buf: &mut [Complex64], inverse: bool) {
    if buf.len() > 1 {
        plan(buf.len(), inverse).process(buf);
    }
}
