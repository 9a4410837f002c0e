use std::io::{BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use super::SegmentBackend;
use crate::error::{Error, Result};
use crate::imgcore::{pnm, BinaryMask, ColorImage};

/// Runs a child process that reads one P6 frame from stdin and answers with
/// one P5 mask (values 0/255, same size) on stdout, strictly alternating.
/// The child's stderr is inherited.
pub struct ExternalProcessSegmenter {
    command: String,
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
}

impl ExternalProcessSegmenter {
    /// Spawns `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Segmenter(format!("cannot start '{command}': {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self {
            command: command.to_string(),
            child,
            stdin: Some(BufWriter::new(stdin)),
            stdout: BufReader::new(stdout),
        })
    }

    fn protocol(&self, what: impl std::fmt::Display) -> Error {
        Error::Protocol(format!("'{}': {what}", self.command))
    }
}

impl SegmentBackend for ExternalProcessSegmenter {
    fn segment(&mut self, frame_id: u64, frame: &ColorImage) -> Result<BinaryMask> {
        let Some(stdin) = self.stdin.as_mut() else {
            return Err(self.protocol("stdin already closed"));
        };
        if let Err(e) = pnm::write_ppm(stdin, frame).and_then(|_| stdin.flush()) {
            return Err(self.protocol(format!("writing frame {frame_id}: {e}")));
        }
        let mask = match pnm::read_mask(&mut self.stdout) {
            Ok(m) => m,
            Err(e) => return Err(self.protocol(format!("reading mask for frame {frame_id}: {e}"))),
        };
        if mask.dims() != frame.dims() {
            return Err(self.protocol(format!(
                "mask for frame {frame_id} is {}x{}, frame is {}x{}",
                mask.width(),
                mask.height(),
                frame.width(),
                frame.height()
            )));
        }
        Ok(mask)
    }
}

impl Drop for ExternalProcessSegmenter {
    fn drop(&mut self) {
        // Closing stdin is the child's signal to exit.
        self.stdin.take();
        if let Ok(None) = self.child.try_wait() {
            std::thread::sleep(std::time::Duration::from_millis(20));
            if let Ok(None) = self.child.try_wait() {
                let _ = self.child.kill();
            }
        }
        let _ = self.child.wait();
    }
}
