use pyo3::prelude::*;

#[pymodule]
fn pgada_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
