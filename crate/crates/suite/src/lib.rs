//! Hosts the `acceptance` test target in `tests/acceptance.rs`. It lives in its
//! own package so that it runs after every other suite in the workspace.
