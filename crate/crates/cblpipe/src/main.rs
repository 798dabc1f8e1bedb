use std::process::ExitCode;

fn main() -> ExitCode {
    let args = std::env::args_os()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned());
    let env = cblpipe::platform::env_snapshot();
    let code = cblpipe::cli::dispatch(args, &env, std::io::stdout(), std::io::stderr());
    ExitCode::from(u8::try_from(code).unwrap_or(cblpipe::exit::INTERNAL_ERROR as u8))
}
