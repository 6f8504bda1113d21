/** Poll a job until it terminates.
 *
 * Transient transport failures retry with exponential backoff instead of
 * losing the edit; a failed job rejects with its error message.
 */

import { ApiError, EditServiceClient, JobInfo } from "./api.js";

export interface PollOptions {
  intervalMs?: number;
  backoffFactor?: number;
  maxIntervalMs?: number;
  maxTransientRetries?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export class JobFailed extends Error {
  constructor(public job: JobInfo) {
    super(job.error ? `${job.error.category}: ${job.error.message}` : "job failed");
  }
}

export async function pollJob(
  client: EditServiceClient,
  jobId: string,
  opts: PollOptions = {},
): Promise<JobInfo> {
  const {
    intervalMs = 1000,
    backoffFactor = 1.5,
    maxIntervalMs = 10_000,
    maxTransientRetries = 5,
    sleep = defaultSleep,
  } = opts;
  let wait = intervalMs;
  let transientFailures = 0;
  for (;;) {
    let job: JobInfo;
    try {
      job = await client.getJob(jobId);
    } catch (err) {
      // 4xx means the job id itself is bad; anything else is transient
      if (err instanceof ApiError && err.status < 500) throw err;
      transientFailures += 1;
      if (transientFailures > maxTransientRetries) throw err;
      await sleep(wait);
      wait = Math.min(maxIntervalMs, wait * backoffFactor);
      continue;
    }
    transientFailures = 0;
    if (job.status === "done") return job;
    if (job.status === "failed") throw new JobFailed(job);
    await sleep(wait);
    wait = Math.min(maxIntervalMs, wait * backoffFactor);
  }
}
